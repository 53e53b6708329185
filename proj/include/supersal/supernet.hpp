#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "supersal/ops.hpp"
#include "supersal/rng.hpp"
#include "supersal/search_space.hpp"
#include "supersal/tensor.hpp"

namespace sal {

// Channel-prefix and centered-kernel selection applied to a stored maximal
// weight. Slices are views: they alias the store, and gradients written
// through them land in the shared buffers.
struct SliceSpec {
    int64_t c_out = 0;
    int64_t c_in = 0;
    int64_t kernel = 0;
};

template <typename T>
Tensor<T> slice_weights(const Tensor<T>& entry, const SliceSpec& spec);

struct StoreEntry {
    std::string name;
    Shape shape;
    int64_t offset = 0;
    int64_t numel = 0;
};

// All trainable weights of the supernet at maximal dimensions, flattened
// into one parameter buffer plus one buffer for batch-norm running stats.
// Every subnet reads views of these buffers; there are no per-subnet copies.
// The flat layout makes optimizer steps, snapshot averaging and checkpoint
// IO simple array operations, and is identical across scalar types so a
// float student and a double teacher mirror each other entry for entry.
template <typename T>
class ParameterStore {
public:
    explicit ParameterStore(const SearchSpace& space);

    const SearchSpace& space() const { return space_; }

    Tensor<T> param(const std::string& name) const;
    Tensor<T> buffer(const std::string& name) const;
    const std::vector<StoreEntry>& param_entries() const { return param_entries_; }
    const std::vector<StoreEntry>& buffer_entries() const { return buffer_entries_; }

    std::vector<T>& param_data() { return params_->data; }
    const std::vector<T>& param_data() const { return params_->data; }
    std::vector<T>& buffer_data() { return buffers_->data; }
    const std::vector<T>& buffer_data() const { return buffers_->data; }

    std::vector<T>& grad_data() {
        params_->ensure_grad();
        return params_->grad;
    }
    bool has_grad() const { return !params_->grad.empty(); }
    void zero_grad() {
        if (has_grad()) std::fill(params_->grad.begin(), params_->grad.end(), T(0));
    }
    double grad_abs_sum() const;

    // He-style init for conv weights, identity affine for norms, zero biases.
    // Each entry draws from its own forked stream, so layout changes in one
    // entry cannot shift another's values.
    void init_params(const Rng& rng);

    // Zeroes running means/vars and accumulation counters ahead of a
    // cumulative-average recalibration pass.
    void reset_bn_stats();
    int64_t* bn_accum_count(const std::string& bn_name);

    template <typename U>
    void copy_from(const ParameterStore<U>& other) {
        check(layout_fingerprint() == other.layout_fingerprint(),
              "parameter store: layout mismatch in copy_from");
        const auto& pd = other.param_data();
        const auto& bd = other.buffer_data();
        for (size_t i = 0; i < pd.size(); ++i) params_->data[i] = static_cast<T>(pd[i]);
        for (size_t i = 0; i < bd.size(); ++i) buffers_->data[i] = static_cast<T>(bd[i]);
        bn_counts_ = other.bn_counts();
    }

    uint64_t layout_fingerprint() const;
    const std::vector<int64_t>& bn_counts() const { return bn_counts_; }
    std::vector<int64_t>& bn_counts() { return bn_counts_; }

    mutable int64_t forward_count = 0;

private:
    const StoreEntry& find(const std::vector<StoreEntry>& entries, const std::string& name) const;

    SearchSpace space_;
    std::shared_ptr<Storage<T>> params_;
    std::shared_ptr<Storage<T>> buffers_;
    std::vector<StoreEntry> param_entries_;
    std::vector<StoreEntry> buffer_entries_;
    std::unordered_map<std::string, size_t> param_index_;
    std::unordered_map<std::string, size_t> buffer_index_;
    std::unordered_map<std::string, size_t> bn_index_;
    std::vector<int64_t> bn_counts_;
};

// Static description of one realized subnet: every layer with its resolved
// channel counts and spatial dims. Built once from an ArchConfig; both the
// executable net and the analytic cost model walk this plan.
struct MbLayerPlan {
    int block = 0;
    int layer = 0;
    int in_ch = 0;
    int hidden = 0;
    int out_ch = 0;
    int kernel = 0;
    int stride = 1;
    bool has_expand = false;  // expansion ratio 1 skips the expand conv
    bool se = false;
    int se_mid = 0;
    bool residual = false;
    int64_t in_h = 0, in_w = 0, out_h = 0, out_w = 0;
};

struct DecoderStagePlan {
    int index = 0;
    int in_ch = 0;
    int out_ch = 0;
    int64_t in_h = 0, in_w = 0, out_h = 0, out_w = 0;
    int skip_block = -1;  // encoder stage whose output is added, -1 for none
};

struct NetworkPlan {
    ArchConfig config;
    int64_t in_h = 0, in_w = 0;
    int stem_out = 0;
    int64_t stem_h = 0, stem_w = 0;
    std::vector<MbLayerPlan> layers;
    int head_in = 0, head_out = 0;
    int64_t head_h = 0, head_w = 0;
    std::vector<DecoderStagePlan> decoder;  // 5 stages back to input resolution
    int out_in = 0;                         // final 1x1 conv input width

    // 2 (stem + head) + sum of depths + 5 decoder + 1 output conv.
    int64_t conv_layer_count() const {
        return 2 + static_cast<int64_t>(layers.size()) + static_cast<int64_t>(decoder.size()) + 1;
    }
};

// Derives the layer plan for a config. The decoder runs five stages, each
// resizing to the recorded resolution of the matching encoder stage (exact
// x2 upsampling whenever the input dims divide by 32) and adding that
// stage's output; the fifth stage restores the input resolution with no
// skip. Decoder widths follow the encoder stage widths.
NetworkPlan plan_network(const ArchConfig& config);

// A subnet bound to store views, ready to run. Holds no weights of its own.
template <typename T>
class ExecutableNet {
public:
    ExecutableNet(const NetworkPlan& plan, const ParameterStore<T>& store);

    // images [B x 3 x H x W] at the planned resolution -> saliency maps
    // [B x 1 x H x W], non-negative, each summing to 1. Records on the
    // active tape when one is live.
    Tensor<T> forward_saliency(const Tensor<T>& images, BnMode mode) const;

    const NetworkPlan& plan() const { return plan_; }

    // Every trainable view this subnet reads: conv weights, biases, and norm
    // affine pairs at their sliced sizes. Gradient checks perturb these.
    std::vector<std::pair<std::string, Tensor<T>>> parameter_views() const;

    // Actual trainable scalars reachable through this subnet's views. Must
    // agree exactly with the analytic parameter count.
    int64_t param_element_count() const;

private:
    struct BnViews {
        Tensor<T> scale, shift, mean, var;
        int64_t* accum = nullptr;
    };
    struct MbLayerViews {
        Tensor<T> expand_w;
        BnViews expand_bn;
        Tensor<T> dw_w;
        BnViews dw_bn;
        Tensor<T> se_fc1_w, se_fc1_b, se_fc2_w, se_fc2_b;
        Tensor<T> project_w;
        BnViews project_bn;
    };

    Tensor<T> run_mb_layer(const MbLayerPlan& p, const MbLayerViews& v, const Tensor<T>& x,
                           BnMode mode) const;

    NetworkPlan plan_;
    const ParameterStore<T>* store_;
    Tensor<T> stem_w_;
    BnViews stem_bn_;
    std::vector<MbLayerViews> mb_;
    Tensor<T> head_w_;
    BnViews head_bn_;
    std::vector<Tensor<T>> dec_w_, dec_b_;
    Tensor<T> out_w_, out_b_;
};

template <typename T>
ExecutableNet<T> build_network(const ArchConfig& config, const ParameterStore<T>& store) {
    return ExecutableNet<T>(plan_network(config), store);
}

// Squeeze-excite bottleneck width: hidden/4, floored, at least 1.
inline int se_mid_width(int hidden) { return hidden / 4 < 1 ? 1 : hidden / 4; }

}  // namespace sal
