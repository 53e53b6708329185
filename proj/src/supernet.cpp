#include "supersal/supernet.hpp"

#include <array>
#include <cmath>

namespace sal {

namespace {
const int kStageStrides[7] = {1, 2, 2, 2, 1, 2, 1};
const bool kStageSe[7] = {false, false, true, false, true, true, true};

// Output extent of a stride-s conv with kernel k and pad k/2.
int64_t conv_out(int64_t extent, int stride) { return (extent - 1) / stride + 1; }
}  // namespace

template <typename T>
Tensor<T> slice_weights(const Tensor<T>& entry, const SliceSpec& spec) {
    check(entry.rank() == 4, "slice_weights: entry must be rank 4, got ",
          shape_str(entry.shape()));
    const int64_t Cout = entry.dim(0), Cin = entry.dim(1), K = entry.dim(2);
    check(spec.c_out >= 1 && spec.c_out <= Cout, "slice_weights: c_out ", spec.c_out,
          " outside [1, ", Cout, "]");
    check(spec.c_in >= 1 && spec.c_in <= Cin, "slice_weights: c_in ", spec.c_in, " outside [1, ",
          Cin, "]");
    check(spec.kernel >= 1 && spec.kernel <= K, "slice_weights: kernel ", spec.kernel,
          " outside [1, ", K, "]");
    check(spec.kernel % 2 == 1, "slice_weights: kernel ", spec.kernel, " must be odd");
    const int64_t k0 = (K - spec.kernel) / 2;  // centered window
    return entry.narrow(0, 0, spec.c_out)
        .narrow(1, 0, spec.c_in)
        .narrow(2, k0, spec.kernel)
        .narrow(3, k0, spec.kernel);
}

template Tensor<float> slice_weights<float>(const Tensor<float>&, const SliceSpec&);
template Tensor<double> slice_weights<double>(const Tensor<double>&, const SliceSpec&);

// ---------------------------------------------------------------------------
// ParameterStore

template <typename T>
ParameterStore<T>::ParameterStore(const SearchSpace& space) : space_(space) {
    space_.validate();
    std::vector<std::pair<std::string, Shape>> params, buffers;
    auto add_bn = [&](const std::string& prefix, int64_t ch) {
        params.emplace_back(prefix + ".scale", Shape{ch});
        params.emplace_back(prefix + ".shift", Shape{ch});
        buffers.emplace_back(prefix + ".mean", Shape{ch});
        buffers.emplace_back(prefix + ".var", Shape{ch});
    };

    const int64_t max_first = space_.first_conv_widths.back();
    params.emplace_back("stem.conv.w", Shape{max_first, 3, 3, 3});
    add_bn("stem.bn", max_first);

    int64_t prev_w = max_first;
    for (size_t b = 0; b < space_.blocks.size(); ++b) {
        const BlockSpace& bs = space_.blocks[b];
        const int64_t max_w = bs.widths.back();
        const int64_t max_e = bs.expansions.back();
        const int64_t max_k = bs.kernels.back();
        const int max_d = bs.depths.back();
        for (int l = 0; l < max_d; ++l) {
            const std::string p = "mb" + std::to_string(b + 1) + ".l" + std::to_string(l);
            const int64_t in_max = (l == 0) ? prev_w : max_w;
            const int64_t hmax = in_max * max_e;
            if (max_e > 1) {
                params.emplace_back(p + ".expand.w", Shape{hmax, in_max, 1, 1});
                add_bn(p + ".expand_bn", hmax);
            }
            params.emplace_back(p + ".dw.w", Shape{hmax, 1, max_k, max_k});
            add_bn(p + ".dw_bn", hmax);
            if (bs.squeeze_excite) {
                const int64_t mid = se_mid_width(static_cast<int>(hmax));
                params.emplace_back(p + ".se.fc1.w", Shape{mid, hmax, 1, 1});
                params.emplace_back(p + ".se.fc1.b", Shape{mid});
                params.emplace_back(p + ".se.fc2.w", Shape{hmax, mid, 1, 1});
                params.emplace_back(p + ".se.fc2.b", Shape{hmax});
            }
            params.emplace_back(p + ".project.w", Shape{max_w, hmax, 1, 1});
            add_bn(p + ".project_bn", max_w);
        }
        prev_w = max_w;
    }

    const int64_t max_last = space_.last_conv_widths.back();
    params.emplace_back("head.conv.w", Shape{max_last, prev_w, 1, 1});
    add_bn("head.bn", max_last);

    const int64_t w0 = space_.blocks[0].widths.back();
    const int64_t w1 = space_.blocks[1].widths.back();
    const int64_t w2 = space_.blocks[2].widths.back();
    const int64_t w4 = space_.blocks[4].widths.back();
    const int64_t dec_in[5] = {max_last, w4, w2, w1, w0};
    const int64_t dec_out[5] = {w4, w2, w1, w0, w0};
    for (int i = 0; i < 5; ++i) {
        const std::string p = "dec" + std::to_string(i);
        params.emplace_back(p + ".conv.w", Shape{dec_out[i], dec_in[i], 3, 3});
        params.emplace_back(p + ".conv.b", Shape{dec_out[i]});
    }
    params.emplace_back("out.conv.w", Shape{1, w0, 1, 1});
    params.emplace_back("out.conv.b", Shape{1});

    auto layout = [](const std::vector<std::pair<std::string, Shape>>& src,
                     std::vector<StoreEntry>& entries,
                     std::unordered_map<std::string, size_t>& index) {
        int64_t offset = 0;
        for (const auto& [name, shape] : src) {
            StoreEntry e{name, shape, offset, shape_numel(shape)};
            index[name] = entries.size();
            entries.push_back(e);
            offset += e.numel;
        }
        return offset;
    };
    params_ = std::make_shared<Storage<T>>();
    buffers_ = std::make_shared<Storage<T>>();
    params_->data.assign(static_cast<size_t>(layout(params, param_entries_, param_index_)), T(0));
    buffers_->data.assign(static_cast<size_t>(layout(buffers, buffer_entries_, buffer_index_)),
                          T(0));

    for (const StoreEntry& e : buffer_entries_) {
        if (e.name.size() >= 4 && e.name.substr(e.name.size() - 4) == ".var") {
            for (int64_t i = 0; i < e.numel; ++i) buffers_->data[static_cast<size_t>(e.offset + i)] = T(1);
            const std::string bn = e.name.substr(0, e.name.size() - 4);
            bn_index_[bn] = bn_counts_.size();
            bn_counts_.push_back(0);
        }
    }
}

template <typename T>
const StoreEntry& ParameterStore<T>::find(const std::vector<StoreEntry>& entries,
                                          const std::string& name) const {
    const auto& index = (&entries == &param_entries_) ? param_index_ : buffer_index_;
    auto it = index.find(name);
    check(it != index.end(), "parameter store: no entry named '", name, "'");
    return entries[it->second];
}

template <typename T>
Tensor<T> ParameterStore<T>::param(const std::string& name) const {
    const StoreEntry& e = find(param_entries_, name);
    Tensor<T> t = Tensor<T>::view_of(params_, e.offset, e.shape);
    t.requires_grad = true;
    return t;
}

template <typename T>
Tensor<T> ParameterStore<T>::buffer(const std::string& name) const {
    const StoreEntry& e = find(buffer_entries_, name);
    return Tensor<T>::view_of(buffers_, e.offset, e.shape);
}

template <typename T>
double ParameterStore<T>::grad_abs_sum() const {
    if (!has_grad()) return 0.0;
    double acc = 0.0;
    for (T g : params_->grad) acc += std::abs(static_cast<double>(g));
    return acc;
}

template <typename T>
void ParameterStore<T>::init_params(const Rng& rng) {
    for (const StoreEntry& e : param_entries_) {
        Rng stream = rng.fork(e.name);
        T* dst = params_->data.data() + e.offset;
        const bool is_conv = e.shape.size() == 4;
        const bool is_scale = e.name.size() >= 6 && e.name.substr(e.name.size() - 6) == ".scale";
        if (is_conv) {
            const double fan_in =
                static_cast<double>(e.shape[1]) * static_cast<double>(e.shape[2] * e.shape[3]);
            const double sd = std::sqrt(2.0 / fan_in);
            for (int64_t i = 0; i < e.numel; ++i) dst[i] = static_cast<T>(stream.normal() * sd);
        } else if (is_scale) {
            for (int64_t i = 0; i < e.numel; ++i) dst[i] = T(1);
        } else {
            for (int64_t i = 0; i < e.numel; ++i) dst[i] = T(0);  // shifts and biases
        }
    }
    for (const StoreEntry& e : buffer_entries_) {
        T* dst = buffers_->data.data() + e.offset;
        const bool is_var = e.name.substr(e.name.size() - 4) == ".var";
        for (int64_t i = 0; i < e.numel; ++i) dst[i] = is_var ? T(1) : T(0);
    }
    std::fill(bn_counts_.begin(), bn_counts_.end(), 0);
}

template <typename T>
void ParameterStore<T>::reset_bn_stats() {
    std::fill(buffers_->data.begin(), buffers_->data.end(), T(0));
    std::fill(bn_counts_.begin(), bn_counts_.end(), 0);
}

template <typename T>
int64_t* ParameterStore<T>::bn_accum_count(const std::string& bn_name) {
    auto it = bn_index_.find(bn_name);
    check(it != bn_index_.end(), "parameter store: no batch-norm layer named '", bn_name, "'");
    return &bn_counts_[it->second];
}

template <typename T>
uint64_t ParameterStore<T>::layout_fingerprint() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    auto mix_str = [&h](const std::string& s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
    };
    auto mix_int = [&h](int64_t v) {
        h ^= static_cast<uint64_t>(v);
        h *= 0x100000001b3ULL;
    };
    for (const auto* entries : {&param_entries_, &buffer_entries_}) {
        for (const StoreEntry& e : *entries) {
            mix_str(e.name);
            for (int64_t d : e.shape) mix_int(d);
            mix_int(e.offset);
        }
    }
    return h;
}

template class ParameterStore<float>;
template class ParameterStore<double>;

// ---------------------------------------------------------------------------
// plan

NetworkPlan plan_network(const ArchConfig& config) {
    check(config.blocks.size() == 7, "plan: expected 7 block choices, got ", config.blocks.size());
    check(config.resolution.h >= 8 && config.resolution.w >= 8, "plan: resolution ",
          config.resolution.h, "x", config.resolution.w, " below 8x8");
    check(config.first_conv_width >= 1, "plan: first conv width must be positive");
    check(config.last_conv_width >= 1, "plan: last conv width must be positive");
    for (size_t b = 0; b < config.blocks.size(); ++b) {
        const BlockChoice& c = config.blocks[b];
        check(c.width >= 1 && c.depth >= 1 && c.expansion >= 1, "plan: block ", b + 1,
              " has a non-positive choice");
        check(c.kernel >= 1 && c.kernel % 2 == 1, "plan: block ", b + 1, " kernel ", c.kernel,
              " must be odd and positive");
    }

    NetworkPlan P;
    P.config = config;
    P.in_h = config.resolution.h;
    P.in_w = config.resolution.w;

    int64_t h = conv_out(P.in_h, 2), w = conv_out(P.in_w, 2);
    P.stem_out = config.first_conv_width;
    P.stem_h = h;
    P.stem_w = w;

    std::array<int64_t, 7> stage_h{}, stage_w{};
    std::array<int, 7> stage_width{};
    int in_ch = config.first_conv_width;
    for (int b = 0; b < 7; ++b) {
        const BlockChoice& c = config.blocks[static_cast<size_t>(b)];
        for (int l = 0; l < c.depth; ++l) {
            MbLayerPlan mp;
            mp.block = b;
            mp.layer = l;
            mp.stride = (l == 0) ? kStageStrides[b] : 1;
            mp.in_ch = in_ch;
            mp.out_ch = c.width;
            mp.kernel = c.kernel;
            mp.has_expand = c.expansion > 1;
            mp.hidden = mp.has_expand ? mp.in_ch * c.expansion : mp.in_ch;
            mp.se = kStageSe[b];
            mp.se_mid = mp.se ? se_mid_width(mp.hidden) : 0;
            mp.residual = (mp.stride == 1 && mp.in_ch == mp.out_ch);
            mp.in_h = h;
            mp.in_w = w;
            if (mp.stride == 2) {
                h = conv_out(h, 2);
                w = conv_out(w, 2);
            }
            mp.out_h = h;
            mp.out_w = w;
            P.layers.push_back(mp);
            in_ch = c.width;
        }
        stage_h[static_cast<size_t>(b)] = h;
        stage_w[static_cast<size_t>(b)] = w;
        stage_width[static_cast<size_t>(b)] = c.width;
    }

    P.head_in = in_ch;
    P.head_out = config.last_conv_width;
    P.head_h = h;
    P.head_w = w;

    struct Target {
        int64_t h, w;
        int ch;
        int skip;
    };
    const Target targets[5] = {
        {stage_h[4], stage_w[4], stage_width[4], 4},
        {stage_h[2], stage_w[2], stage_width[2], 2},
        {stage_h[1], stage_w[1], stage_width[1], 1},
        {stage_h[0], stage_w[0], stage_width[0], 0},
        {P.in_h, P.in_w, stage_width[0], -1},
    };
    int dch = config.last_conv_width;
    int64_t dh = h, dw = w;
    for (int i = 0; i < 5; ++i) {
        DecoderStagePlan d;
        d.index = i;
        d.in_ch = dch;
        d.out_ch = targets[i].ch;
        d.in_h = dh;
        d.in_w = dw;
        d.out_h = targets[i].h;
        d.out_w = targets[i].w;
        d.skip_block = targets[i].skip;
        P.decoder.push_back(d);
        dch = d.out_ch;
        dh = d.out_h;
        dw = d.out_w;
    }
    P.out_in = stage_width[0];
    return P;
}

// ---------------------------------------------------------------------------
// ExecutableNet

template <typename T>
ExecutableNet<T>::ExecutableNet(const NetworkPlan& plan, const ParameterStore<T>& store)
    : plan_(plan), store_(&store) {
    auto bn_views = [&store](const std::string& prefix, int64_t ch) {
        BnViews v;
        v.scale = store.param(prefix + ".scale").narrow(0, 0, ch);
        v.shift = store.param(prefix + ".shift").narrow(0, 0, ch);
        v.mean = store.buffer(prefix + ".mean").narrow(0, 0, ch);
        v.var = store.buffer(prefix + ".var").narrow(0, 0, ch);
        v.accum = const_cast<ParameterStore<T>&>(store).bn_accum_count(prefix);
        return v;
    };

    const ArchConfig& cfg = plan_.config;
    stem_w_ = slice_weights(store.param("stem.conv.w"), {cfg.first_conv_width, 3, 3});
    stem_bn_ = bn_views("stem.bn", cfg.first_conv_width);

    for (const MbLayerPlan& p : plan_.layers) {
        const std::string pre = "mb" + std::to_string(p.block + 1) + ".l" + std::to_string(p.layer);
        MbLayerViews v;
        if (p.has_expand) {
            v.expand_w = slice_weights(store.param(pre + ".expand.w"), {p.hidden, p.in_ch, 1});
            v.expand_bn = bn_views(pre + ".expand_bn", p.hidden);
        }
        v.dw_w = slice_weights(store.param(pre + ".dw.w"), {p.hidden, 1, p.kernel});
        v.dw_bn = bn_views(pre + ".dw_bn", p.hidden);
        if (p.se) {
            v.se_fc1_w = slice_weights(store.param(pre + ".se.fc1.w"), {p.se_mid, p.hidden, 1});
            v.se_fc1_b = store.param(pre + ".se.fc1.b").narrow(0, 0, p.se_mid);
            v.se_fc2_w = slice_weights(store.param(pre + ".se.fc2.w"), {p.hidden, p.se_mid, 1});
            v.se_fc2_b = store.param(pre + ".se.fc2.b").narrow(0, 0, p.hidden);
        }
        v.project_w = slice_weights(store.param(pre + ".project.w"), {p.out_ch, p.hidden, 1});
        v.project_bn = bn_views(pre + ".project_bn", p.out_ch);
        mb_.push_back(std::move(v));
    }

    head_w_ = slice_weights(store.param("head.conv.w"), {plan_.head_out, plan_.head_in, 1});
    head_bn_ = bn_views("head.bn", plan_.head_out);

    for (const DecoderStagePlan& d : plan_.decoder) {
        const std::string pre = "dec" + std::to_string(d.index);
        dec_w_.push_back(slice_weights(store.param(pre + ".conv.w"), {d.out_ch, d.in_ch, 3}));
        dec_b_.push_back(store.param(pre + ".conv.b").narrow(0, 0, d.out_ch));
    }
    out_w_ = slice_weights(store.param("out.conv.w"), {1, plan_.out_in, 1});
    out_b_ = store.param("out.conv.b");
}

template <typename T>
Tensor<T> ExecutableNet<T>::run_mb_layer(const MbLayerPlan& p, const MbLayerViews& v,
                                         const Tensor<T>& input, BnMode mode) const {
    Tensor<T> x = input;
    if (p.has_expand) {
        x = conv2d<T>(x, v.expand_w, nullptr, 1, 0, 1);
        x = batch_norm(x, v.expand_bn.scale, v.expand_bn.shift, v.expand_bn.mean, v.expand_bn.var,
                       v.expand_bn.accum, mode);
        x = hswish(x);
    }
    x = conv2d<T>(x, v.dw_w, nullptr, p.stride, p.kernel / 2, p.hidden);
    x = batch_norm(x, v.dw_bn.scale, v.dw_bn.shift, v.dw_bn.mean, v.dw_bn.var, v.dw_bn.accum,
                   mode);
    x = hswish(x);
    if (p.se) {
        Tensor<T> s = global_avg_pool(x);
        s = relu(conv2d(s, v.se_fc1_w, &v.se_fc1_b, 1, 0, 1));
        s = sigmoid(conv2d(s, v.se_fc2_w, &v.se_fc2_b, 1, 0, 1));
        x = mul_channel(x, s);
    }
    x = conv2d<T>(x, v.project_w, nullptr, 1, 0, 1);
    x = batch_norm(x, v.project_bn.scale, v.project_bn.shift, v.project_bn.mean, v.project_bn.var,
                   v.project_bn.accum, mode);
    if (p.residual) x = add(x, input);
    return x;
}

template <typename T>
Tensor<T> ExecutableNet<T>::forward_saliency(const Tensor<T>& images, BnMode mode) const {
    check(images.rank() == 4 && images.dim(1) == 3, "forward: input must be [B x 3 x H x W], got ",
          shape_str(images.shape()));
    check(images.dim(2) == plan_.in_h && images.dim(3) == plan_.in_w,
          "forward: resolution mismatch: input ", images.dim(2), "x", images.dim(3),
          " vs configured ", plan_.in_h, "x", plan_.in_w);
    ++store_->forward_count;

    Tensor<T> x = conv2d<T>(images, stem_w_, nullptr, 2, 1, 1);
    x = batch_norm(x, stem_bn_.scale, stem_bn_.shift, stem_bn_.mean, stem_bn_.var, stem_bn_.accum,
                   mode);
    x = hswish(x);

    std::array<Tensor<T>, 7> stage_out;
    for (size_t i = 0; i < plan_.layers.size(); ++i) {
        const MbLayerPlan& p = plan_.layers[i];
        x = run_mb_layer(p, mb_[i], x, mode);
        const int depth = plan_.config.blocks[static_cast<size_t>(p.block)].depth;
        if (p.layer == depth - 1) stage_out[static_cast<size_t>(p.block)] = x;
    }

    x = conv2d<T>(x, head_w_, nullptr, 1, 0, 1);
    x = batch_norm(x, head_bn_.scale, head_bn_.shift, head_bn_.mean, head_bn_.var, head_bn_.accum,
                   mode);
    x = hswish(x);

    for (size_t i = 0; i < plan_.decoder.size(); ++i) {
        const DecoderStagePlan& d = plan_.decoder[i];
        x = bilinear_resize(x, d.out_h, d.out_w);
        x = relu(conv2d(x, dec_w_[i], &dec_b_[i], 1, 1, 1));
        if (d.skip_block >= 0) {
            const Tensor<T>& skip = stage_out[static_cast<size_t>(d.skip_block)];
            // Decoder widths equal the matching encoder stage widths by
            // construction, so the channel-prefix add is the full tensor.
            check(skip.dim(1) == x.dim(1), "forward: decoder stage ", d.index, " width ",
                  x.dim(1), " does not match encoder stage width ", skip.dim(1));
            x = add(x, skip);
        }
    }

    x = conv2d(x, out_w_, &out_b_, 1, 0, 1);
    x = sigmoid(x);
    return normalize_sum_per_image(x);
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> ExecutableNet<T>::parameter_views() const {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    auto put = [&out](const std::string& name, const Tensor<T>& t) {
        if (t.defined()) out.emplace_back(name, t);
    };
    auto put_bn = [&put](const std::string& name, const BnViews& v) {
        put(name + ".scale", v.scale);
        put(name + ".shift", v.shift);
    };
    put("stem.conv.w", stem_w_);
    put_bn("stem.bn", stem_bn_);
    for (size_t i = 0; i < mb_.size(); ++i) {
        const MbLayerPlan& p = plan_.layers[i];
        const MbLayerViews& v = mb_[i];
        const std::string pre = "mb" + std::to_string(p.block + 1) + ".l" + std::to_string(p.layer);
        if (p.has_expand) {
            put(pre + ".expand.w", v.expand_w);
            put_bn(pre + ".expand_bn", v.expand_bn);
        }
        put(pre + ".dw.w", v.dw_w);
        put_bn(pre + ".dw_bn", v.dw_bn);
        put(pre + ".se.fc1.w", v.se_fc1_w);
        put(pre + ".se.fc1.b", v.se_fc1_b);
        put(pre + ".se.fc2.w", v.se_fc2_w);
        put(pre + ".se.fc2.b", v.se_fc2_b);
        put(pre + ".project.w", v.project_w);
        put_bn(pre + ".project_bn", v.project_bn);
    }
    put("head.conv.w", head_w_);
    put_bn("head.bn", head_bn_);
    for (size_t i = 0; i < dec_w_.size(); ++i) {
        put("dec" + std::to_string(i) + ".conv.w", dec_w_[i]);
        put("dec" + std::to_string(i) + ".conv.b", dec_b_[i]);
    }
    put("out.conv.w", out_w_);
    put("out.conv.b", out_b_);
    return out;
}

template <typename T>
int64_t ExecutableNet<T>::param_element_count() const {
    int64_t n = 0;
    for (const auto& [name, view] : parameter_views()) n += view.numel();
    return n;
}

template class ExecutableNet<float>;
template class ExecutableNet<double>;

}  // namespace sal
