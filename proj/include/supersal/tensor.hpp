#pragma once

#include <cstdint>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "supersal/common.hpp"

namespace sal {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Flat buffer shared by a tensor and all views sliced from it. The gradient
// buffer lives here too, so a gradient written through any view lands in the
// owning buffer — this is what makes sliced supernet weights train the shared
// store directly.
template <typename T>
struct Storage {
    std::vector<T> data;
    std::vector<T> grad;  // empty until a backward pass touches it

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

// Dense tensor with strides. Row-major and contiguous when freshly created;
// narrow()/slicing produce aliasing views with adjusted offset/strides.
// Precision is the template parameter: float for training, double for
// oracles and gradient checks.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape) { return filled(std::move(shape), T(0)); }

    static Tensor filled(Shape shape, T value) {
        Tensor t;
        t.init_contiguous(std::move(shape));
        t.storage_->data.assign(static_cast<size_t>(t.numel()), value);
        return t;
    }

    static Tensor from_data(Shape shape, std::vector<T> data) {
        Tensor t;
        t.init_contiguous(std::move(shape));
        check(static_cast<int64_t>(data.size()) == t.numel(), "tensor: data size ",
              data.size(), " does not match shape ", shape_str(t.shape_));
        t.storage_->data = std::move(data);
        return t;
    }

    static Tensor scalar(T value) { return from_data({1}, {value}); }

    // Contiguous view into an existing storage at `offset`. Used by the
    // parameter store to expose named entries of its flat buffer.
    static Tensor view_of(std::shared_ptr<Storage<T>> storage, int64_t offset, Shape shape) {
        Tensor t;
        t.shape_ = std::move(shape);
        t.strides_.assign(t.shape_.size(), 1);
        for (size_t i = t.shape_.size() - 1; i-- > 0;)
            t.strides_[i] = t.strides_[i + 1] * t.shape_[i + 1];
        check(offset + shape_numel(t.shape_) <= static_cast<int64_t>(storage->data.size()),
              "view_of: window exceeds storage");
        t.storage_ = std::move(storage);
        t.offset_ = offset;
        return t;
    }

    bool defined() const { return storage_ != nullptr; }
    const Shape& shape() const { return shape_; }
    int64_t dim(size_t i) const { return shape_.at(i); }
    size_t rank() const { return shape_.size(); }
    int64_t numel() const { return shape_numel(shape_); }
    const std::vector<int64_t>& strides() const { return strides_; }
    int64_t offset() const { return offset_; }

    bool is_contiguous() const {
        int64_t expect = 1;
        for (size_t i = shape_.size(); i-- > 0;) {
            if (shape_[i] != 1 && strides_[i] != expect) return false;
            expect *= shape_[i];
        }
        return true;
    }

    std::shared_ptr<Storage<T>> storage() const { return storage_; }

    T* data() { return storage_->data.data() + offset_; }
    const T* data() const { return storage_->data.data() + offset_; }

    void ensure_grad() const { storage_->ensure_grad(); }
    bool has_grad() const { return !storage_->grad.empty(); }
    T* grad_data() const { return storage_->grad.data() + offset_; }

    // Element access by multi-index (rank checked by caller).
    int64_t index(std::initializer_list<int64_t> idx) const {
        int64_t flat = 0;
        size_t i = 0;
        for (int64_t v : idx) flat += v * strides_[i++];
        return flat;
    }
    T& at(std::initializer_list<int64_t> idx) { return data()[index(idx)]; }
    T at(std::initializer_list<int64_t> idx) const { return data()[index(idx)]; }

    // View of [start, start+len) along `dim`. Shares storage; no copy.
    Tensor narrow(size_t dim, int64_t start, int64_t len) const {
        check(dim < shape_.size(), "narrow: dim ", dim, " out of range for ", shape_str(shape_));
        check(start >= 0 && len >= 1 && start + len <= shape_[dim], "narrow: window [", start,
              ", ", start + len, ") exceeds extent ", shape_[dim], " of dim ", dim);
        Tensor v = *this;
        v.offset_ += start * strides_[dim];
        v.shape_[dim] = len;
        return v;
    }

    // Contiguous deep copy of the viewed elements (detached from storage).
    Tensor clone() const {
        Tensor out;
        out.init_contiguous(shape_);
        out.storage_->data = to_vector();
        out.requires_grad = false;
        return out;
    }

    std::vector<T> to_vector() const {
        std::vector<T> out(static_cast<size_t>(numel()));
        int64_t i = 0;
        const T* base = data();
        for_each_offset([&](int64_t off) { out[static_cast<size_t>(i++)] = base[off]; });
        return out;
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(static_cast<size_t>(numel()));
        int64_t i = 0;
        const T* base = data();
        for_each_offset([&](int64_t off) { out[static_cast<size_t>(i++)] = static_cast<U>(base[off]); });
        return Tensor<U>::from_data(shape_, std::move(out));
    }

    void fill(T v) {
        T* base = data();
        for_each_offset([&](int64_t off) { base[off] = v; });
    }

    // Visits every element's storage offset (relative to offset_) in
    // row-major logical order. Works for arbitrary rank and strides.
    template <typename Fn>
    void for_each_offset(Fn&& fn) const {
        const size_t r = shape_.size();
        if (r == 0) {
            fn(0);
            return;
        }
        std::vector<int64_t> idx(r, 0);
        int64_t off = 0;
        for (;;) {
            fn(off);
            size_t d = r;
            while (d-- > 0) {
                ++idx[d];
                off += strides_[d];
                if (idx[d] < shape_[d]) break;
                off -= strides_[d] * shape_[d];
                idx[d] = 0;
                if (d == 0) return;
            }
        }
    }

    bool requires_grad = false;

private:
    void init_contiguous(Shape shape) {
        shape_ = std::move(shape);
        check(!shape_.empty(), "tensor: rank-0 shapes are not supported");
        for (int64_t e : shape_) check(e >= 1, "tensor: non-positive extent in ", shape_str(shape_));
        strides_.assign(shape_.size(), 1);
        for (size_t i = shape_.size() - 1; i-- > 0;) strides_[i] = strides_[i + 1] * shape_[i + 1];
        storage_ = std::make_shared<Storage<T>>();
        storage_->data.resize(static_cast<size_t>(shape_numel(shape_)));
        offset_ = 0;
    }

    std::shared_ptr<Storage<T>> storage_;
    int64_t offset_ = 0;
    Shape shape_;
    std::vector<int64_t> strides_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace sal
