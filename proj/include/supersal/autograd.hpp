#pragma once

#include <functional>
#include <vector>

#include "supersal/tensor.hpp"

namespace sal {

// Reverse-mode tape. Operations record one node each in forward order;
// backward() replays them in exact reverse. Gradients accumulate additively
// in the tensors' storage buffers, so fan-out and aliasing views are handled
// without explicit graph edges: a view's gradient writes land in its parent
// storage before the parent's producing node runs.
template <typename T>
class Tape {
public:
    void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }

    // Seeds d(loss)/d(loss) = 1 and propagates. `loss` must be scalar.
    void backward(const Tensor<T>& loss) {
        check(loss.numel() == 1, "backward: loss must be scalar, got ", shape_str(loss.shape()));
        loss.ensure_grad();
        loss.grad_data()[0] += T(1);
        for (size_t i = nodes_.size(); i-- > 0;) nodes_[i]();
    }

    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

private:
    std::vector<std::function<void()>> nodes_;
};

namespace autograd {

template <typename T>
inline thread_local Tape<T>* g_active = nullptr;

template <typename T>
bool taping() {
    return g_active<T> != nullptr;
}

template <typename T>
Tape<T>* active() {
    return g_active<T>;
}

}  // namespace autograd

// RAII activation of a tape. Ops only record while a scope is live, so a
// teacher forward (no scope) is a plain gradient-free evaluation.
template <typename T>
class TapeScope {
public:
    explicit TapeScope(Tape<T>& tape) : prev_(autograd::g_active<T>) { autograd::g_active<T> = &tape; }
    ~TapeScope() { autograd::g_active<T> = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape<T>* prev_;
};

}  // namespace sal
