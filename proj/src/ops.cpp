#include "supersal/ops.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

namespace sal {
namespace {

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    check(a.shape() == b.shape(), op, ": shape mismatch ", shape_str(a.shape()), " vs ",
          shape_str(b.shape()));
}

template <typename T>
bool want_grad(const Tensor<T>& x) {
    return autograd::taping<T>() && x.requires_grad;
}

// Shared skeleton for elementwise unary ops. df(x, y) is the local
// derivative given the input and the already-computed output.
template <typename T, typename FwdFn, typename BwdFn>
Tensor<T> unary_op(const Tensor<T>& x, FwdFn f, BwdFn df) {
    std::vector<T> yv(static_cast<size_t>(x.numel()));
    {
        const T* xb = x.data();
        int64_t i = 0;
        x.for_each_offset([&](int64_t off) { yv[static_cast<size_t>(i++)] = f(xb[off]); });
    }
    Tensor<T> y = Tensor<T>::from_data(x.shape(), std::move(yv));
    if (want_grad(x)) {
        y.requires_grad = true;
        autograd::active<T>()->record([x, y, df]() {
            if (!y.has_grad()) return;
            x.ensure_grad();
            const T* gy = y.grad_data();
            const T* yp = y.data();
            const T* xb = x.data();
            T* gx = x.grad_data();
            int64_t i = 0;
            x.for_each_offset([&](int64_t off) {
                gx[off] += gy[i] * df(xb[off], yp[i]);
                ++i;
            });
        });
    }
    return y;
}

template <typename T>
void scatter_add(const Tensor<T>& dst, const std::vector<T>& contrib) {
    dst.ensure_grad();
    T* g = dst.grad_data();
    if (dst.numel() == 1) {
        T acc = T(0);
        for (T c : contrib) acc += c;
        g[0] += acc;
        return;
    }
    int64_t i = 0;
    dst.for_each_offset([&](int64_t off) { g[off] += contrib[static_cast<size_t>(i++)]; });
}

}  // namespace

// ---------------------------------------------------------------------------
// conv2d

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias_in,
                 int stride, int padding, int groups) {
    check(input.rank() == 4, "conv2d: input must be rank 4, got ", shape_str(input.shape()));
    check(weight.rank() == 4, "conv2d: weight must be rank 4, got ", shape_str(weight.shape()));
    const int64_t B = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int64_t Cout = weight.dim(0), icpg = weight.dim(1), K = weight.dim(2);
    check(weight.dim(3) == K, "conv2d: kernel must be square, got ", K, "x", weight.dim(3));
    check(K % 2 == 1, "conv2d: kernel size must be odd, got ", K);
    check(stride >= 1, "conv2d: stride must be positive, got ", stride);
    check(padding >= 0, "conv2d: padding must be non-negative, got ", padding);
    check(groups >= 1, "conv2d: groups must be positive, got ", groups);
    check(Cin % groups == 0, "conv2d: input channels ", Cin, " not divisible by groups ", groups);
    check(Cout % groups == 0, "conv2d: output channels ", Cout, " not divisible by groups ", groups);
    check(icpg == Cin / groups, "conv2d: weight input-channel extent ", icpg,
          " does not match input channels/groups ", Cin / groups);
    std::optional<Tensor<T>> bias;
    if (bias_in) {
        check(bias_in->rank() == 1 && bias_in->dim(0) == Cout, "conv2d: bias extent ",
              shape_str(bias_in->shape()), " does not match output channels ", Cout);
        bias = *bias_in;
    }
    const int64_t Ho = (H + 2 * padding - K) / stride + 1;
    const int64_t Wo = (W + 2 * padding - K) / stride + 1;
    check(H + 2 * padding >= K && W + 2 * padding >= K, "conv2d: kernel ", K,
          " exceeds padded input ", H + 2 * padding, "x", W + 2 * padding);

    Tensor<T> y = Tensor<T>::zeros({B, Cout, Ho, Wo});
    const int64_t ocpg = Cout / groups;

    const T* xp = input.data();
    const auto& xs = input.strides();
    const T* wp = weight.data();
    const auto& ws = weight.strides();
    T* yp = y.data();
    const auto& ysd = y.strides();

    // Row bounds so that ih = oh*stride - padding + kh stays inside [0, H).
    auto lo_of = [padding](int64_t k, int64_t s) {
        int64_t num = padding - k;
        return num <= 0 ? int64_t{0} : (num + s - 1) / s;
    };
    auto hi_of = [padding](int64_t k, int64_t s, int64_t extent, int64_t out_extent) {
        int64_t num = extent - 1 + padding - k;
        if (num < 0) return int64_t{-1};
        return std::min(out_extent - 1, num / s);
    };

    for (int64_t b = 0; b < B; ++b) {
        for (int64_t oc = 0; oc < Cout; ++oc) {
            const int64_t g = oc / ocpg;
            for (int64_t icl = 0; icl < icpg; ++icl) {
                const int64_t ic = g * icpg + icl;
                for (int64_t kh = 0; kh < K; ++kh) {
                    const int64_t oh_lo = lo_of(kh, stride), oh_hi = hi_of(kh, stride, H, Ho);
                    for (int64_t kw = 0; kw < K; ++kw) {
                        const int64_t ow_lo = lo_of(kw, stride), ow_hi = hi_of(kw, stride, W, Wo);
                        const T wv = wp[oc * ws[0] + icl * ws[1] + kh * ws[2] + kw * ws[3]];
                        for (int64_t oh = oh_lo; oh <= oh_hi; ++oh) {
                            const int64_t ih = oh * stride - padding + kh;
                            const T* xrow = xp + b * xs[0] + ic * xs[1] + ih * xs[2];
                            T* yrow = yp + b * ysd[0] + oc * ysd[1] + oh * ysd[2];
                            int64_t iw = ow_lo * stride - padding + kw;
                            for (int64_t ow = ow_lo; ow <= ow_hi; ++ow, iw += stride) {
                                yrow[ow] += wv * xrow[iw * xs[3]];
                            }
                        }
                    }
                }
            }
            if (bias) {
                const T bv = bias->data()[oc * bias->strides()[0]];
                for (int64_t oh = 0; oh < Ho; ++oh) {
                    T* yrow = yp + b * ysd[0] + oc * ysd[1] + oh * ysd[2];
                    for (int64_t ow = 0; ow < Wo; ++ow) yrow[ow] += bv;
                }
            }
        }
    }

    const bool rec = autograd::taping<T>() &&
                     (input.requires_grad || weight.requires_grad || (bias && bias->requires_grad));
    if (rec) {
        y.requires_grad = true;
        Tensor<T> x = input, w = weight;
        autograd::active<T>()->record([x, w, bias, y, stride, padding, groups, lo_of, hi_of]() {
            if (!y.has_grad()) return;
            const int64_t B = x.dim(0), H = x.dim(2), W = x.dim(3);
            const int64_t Cout = w.dim(0), icpg = w.dim(1), K = w.dim(2);
            const int64_t Ho = y.dim(2), Wo = y.dim(3);
            const int64_t ocpg = Cout / groups;
            const T* gy = y.grad_data();
            const auto& ysd = y.strides();
            const T* xp = x.data();
            const auto& xs = x.strides();
            const T* wp = w.data();
            const auto& ws = w.strides();

            if (bias && bias->requires_grad) {
                bias->ensure_grad();
                T* gb = bias->grad_data();
                for (int64_t oc = 0; oc < Cout; ++oc) {
                    T acc = T(0);
                    for (int64_t b = 0; b < B; ++b) {
                        const T* grow = gy + b * ysd[0] + oc * ysd[1];
                        for (int64_t oh = 0; oh < Ho; ++oh)
                            for (int64_t ow = 0; ow < Wo; ++ow) acc += grow[oh * ysd[2] + ow];
                    }
                    gb[oc * bias->strides()[0]] += acc;
                }
            }
            if (w.requires_grad) {
                w.ensure_grad();
                T* gw = w.grad_data();
                for (int64_t oc = 0; oc < Cout; ++oc) {
                    const int64_t g = oc / ocpg;
                    for (int64_t icl = 0; icl < icpg; ++icl) {
                        const int64_t ic = g * icpg + icl;
                        for (int64_t kh = 0; kh < K; ++kh) {
                            const int64_t oh_lo = lo_of(kh, stride), oh_hi = hi_of(kh, stride, H, Ho);
                            for (int64_t kw = 0; kw < K; ++kw) {
                                const int64_t ow_lo = lo_of(kw, stride), ow_hi = hi_of(kw, stride, W, Wo);
                                T acc = T(0);
                                for (int64_t b = 0; b < B; ++b) {
                                    for (int64_t oh = oh_lo; oh <= oh_hi; ++oh) {
                                        const int64_t ih = oh * stride - padding + kh;
                                        const T* xrow = xp + b * xs[0] + ic * xs[1] + ih * xs[2];
                                        const T* grow = gy + b * ysd[0] + oc * ysd[1] + oh * ysd[2];
                                        int64_t iw = ow_lo * stride - padding + kw;
                                        for (int64_t ow = ow_lo; ow <= ow_hi; ++ow, iw += stride)
                                            acc += grow[ow] * xrow[iw * xs[3]];
                                    }
                                }
                                gw[oc * ws[0] + icl * ws[1] + kh * ws[2] + kw * ws[3]] += acc;
                            }
                        }
                    }
                }
            }
            if (x.requires_grad) {
                x.ensure_grad();
                T* gx = x.grad_data();
                for (int64_t b = 0; b < B; ++b) {
                    for (int64_t oc = 0; oc < Cout; ++oc) {
                        const int64_t g = oc / ocpg;
                        for (int64_t icl = 0; icl < icpg; ++icl) {
                            const int64_t ic = g * icpg + icl;
                            for (int64_t kh = 0; kh < K; ++kh) {
                                const int64_t oh_lo = lo_of(kh, stride),
                                              oh_hi = hi_of(kh, stride, H, Ho);
                                for (int64_t kw = 0; kw < K; ++kw) {
                                    const int64_t ow_lo = lo_of(kw, stride),
                                                  ow_hi = hi_of(kw, stride, W, Wo);
                                    const T wv = wp[oc * ws[0] + icl * ws[1] + kh * ws[2] + kw * ws[3]];
                                    for (int64_t oh = oh_lo; oh <= oh_hi; ++oh) {
                                        const int64_t ih = oh * stride - padding + kh;
                                        T* gxrow = gx + b * xs[0] + ic * xs[1] + ih * xs[2];
                                        const T* grow = gy + b * ysd[0] + oc * ysd[1] + oh * ysd[2];
                                        int64_t iw = ow_lo * stride - padding + kw;
                                        for (int64_t ow = ow_lo; ow <= ow_hi; ++ow, iw += stride)
                                            gxrow[iw * xs[3]] += grow[ow] * wv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// bilinear resize

namespace {
struct LinTap {
    int64_t i0, i1;
    double f;  // weight of i1; i0 gets 1-f
};

inline std::vector<LinTap> resize_taps(int64_t in, int64_t out) {
    std::vector<LinTap> taps(static_cast<size_t>(out));
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (int64_t i = 0; i < out; ++i) {
        const double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
        LinTap t;
        if (src <= 0.0) {
            t = {0, 0, 0.0};
        } else if (src >= static_cast<double>(in - 1)) {
            t = {in - 1, in - 1, 0.0};
        } else {
            const int64_t i0 = static_cast<int64_t>(src);
            t = {i0, i0 + 1, src - static_cast<double>(i0)};
        }
        taps[static_cast<size_t>(i)] = t;
    }
    return taps;
}
}  // namespace

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& input, int64_t out_h, int64_t out_w) {
    check(input.rank() == 4, "bilinear_resize: input must be rank 4, got ",
          shape_str(input.shape()));
    check(out_h >= 1 && out_w >= 1, "bilinear_resize: non-positive target ", out_h, "x", out_w);
    const int64_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const auto htaps = resize_taps(H, out_h);
    const auto wtaps = resize_taps(W, out_w);

    Tensor<T> y = Tensor<T>::zeros({B, C, out_h, out_w});
    const T* xp = input.data();
    const auto& xs = input.strides();
    T* yp = y.data();
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t c = 0; c < C; ++c) {
            const T* plane = xp + b * xs[0] + c * xs[1];
            for (int64_t oh = 0; oh < out_h; ++oh) {
                const auto& th = htaps[static_cast<size_t>(oh)];
                const T fh = static_cast<T>(th.f);
                for (int64_t ow = 0; ow < out_w; ++ow) {
                    const auto& tw = wtaps[static_cast<size_t>(ow)];
                    const T fw = static_cast<T>(tw.f);
                    const T v00 = plane[th.i0 * xs[2] + tw.i0 * xs[3]];
                    const T v01 = plane[th.i0 * xs[2] + tw.i1 * xs[3]];
                    const T v10 = plane[th.i1 * xs[2] + tw.i0 * xs[3]];
                    const T v11 = plane[th.i1 * xs[2] + tw.i1 * xs[3]];
                    const T top = (T(1) - fw) * v00 + fw * v01;
                    const T bot = (T(1) - fw) * v10 + fw * v11;
                    *yp++ = (T(1) - fh) * top + fh * bot;
                }
            }
        }
    }

    if (want_grad(input)) {
        y.requires_grad = true;
        Tensor<T> x = input;
        autograd::active<T>()->record([x, y, htaps, wtaps]() {
            if (!y.has_grad()) return;
            x.ensure_grad();
            const int64_t B = x.dim(0), C = x.dim(1);
            const int64_t out_h = y.dim(2), out_w = y.dim(3);
            const auto& xs = x.strides();
            T* gx = x.grad_data();
            const T* gy = y.grad_data();
            for (int64_t b = 0; b < B; ++b) {
                for (int64_t c = 0; c < C; ++c) {
                    T* plane = gx + b * xs[0] + c * xs[1];
                    for (int64_t oh = 0; oh < out_h; ++oh) {
                        const auto& th = htaps[static_cast<size_t>(oh)];
                        const T fh = static_cast<T>(th.f);
                        for (int64_t ow = 0; ow < out_w; ++ow) {
                            const auto& tw = wtaps[static_cast<size_t>(ow)];
                            const T fw = static_cast<T>(tw.f);
                            const T g = *gy++;
                            plane[th.i0 * xs[2] + tw.i0 * xs[3]] += g * (T(1) - fh) * (T(1) - fw);
                            plane[th.i0 * xs[2] + tw.i1 * xs[3]] += g * (T(1) - fh) * fw;
                            plane[th.i1 * xs[2] + tw.i0 * xs[3]] += g * fh * (T(1) - fw);
                            plane[th.i1 * xs[2] + tw.i1 * xs[3]] += g * fh * fw;
                        }
                    }
                }
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& input, int factor) {
    check(factor >= 1, "bilinear_upsample: factor must be >= 1, got ", factor);
    check(input.rank() == 4, "bilinear_upsample: input must be rank 4, got ",
          shape_str(input.shape()));
    return bilinear_resize(input, input.dim(2) * factor, input.dim(3) * factor);
}

// ---------------------------------------------------------------------------
// elementwise

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    return unary_op(
        x, [](T v) { return v > T(0) ? v : T(0); },
        [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> hswish(const Tensor<T>& x) {
    return unary_op(
        x,
        [](T v) {
            T r = v + T(3);
            r = r < T(0) ? T(0) : (r > T(6) ? T(6) : r);
            return v * r / T(6);
        },
        [](T v, T) {
            if (v <= T(-3)) return T(0);
            if (v >= T(3)) return T(1);
            return (T(2) * v + T(3)) / T(6);
        });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return unary_op(
        x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
        [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> log_op(const Tensor<T>& x) {
    return unary_op(
        x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> sqrt_op(const Tensor<T>& x) {
    return unary_op(
        x, [](T v) { return std::sqrt(v); },
        [](T v, T y) { return v > T(0) ? T(1) / (T(2) * y) : T(0); });
}

// ---------------------------------------------------------------------------
// binary elementwise (with scalar broadcast)

namespace {

enum class BinKind { Add, Sub, Mul, Div };

template <typename T>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, BinKind kind, const char* name) {
    const bool a_scalar = a.numel() == 1, b_scalar = b.numel() == 1;
    if (!a_scalar && !b_scalar) check_same_shape(a, b, name);
    const Shape& out_shape = a_scalar ? b.shape() : a.shape();
    const auto av = a.to_vector();
    const auto bv = b.to_vector();
    const int64_t n = shape_numel(out_shape);
    std::vector<T> yv(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const T x = av[a_scalar ? 0 : static_cast<size_t>(i)];
        const T z = bv[b_scalar ? 0 : static_cast<size_t>(i)];
        T r;
        switch (kind) {
            case BinKind::Add: r = x + z; break;
            case BinKind::Sub: r = x - z; break;
            case BinKind::Mul: r = x * z; break;
            default: r = x / z; break;
        }
        yv[static_cast<size_t>(i)] = r;
    }
    Tensor<T> y = Tensor<T>::from_data(out_shape, std::move(yv));
    const bool rec = autograd::taping<T>() && (a.requires_grad || b.requires_grad);
    if (rec) {
        y.requires_grad = true;
        autograd::active<T>()->record([a, b, y, kind, a_scalar, b_scalar]() {
            if (!y.has_grad()) return;
            const int64_t n = y.numel();
            const T* gy = y.grad_data();
            const T* yp = y.data();
            const auto av = a.to_vector();
            const auto bv = b.to_vector();
            if (a.requires_grad) {
                std::vector<T> ca(static_cast<size_t>(n));
                for (int64_t i = 0; i < n; ++i) {
                    const T z = bv[b_scalar ? 0 : static_cast<size_t>(i)];
                    switch (kind) {
                        case BinKind::Add:
                        case BinKind::Sub: ca[static_cast<size_t>(i)] = gy[i]; break;
                        case BinKind::Mul: ca[static_cast<size_t>(i)] = gy[i] * z; break;
                        default: ca[static_cast<size_t>(i)] = gy[i] / z; break;
                    }
                }
                scatter_add(a, ca);
            }
            if (b.requires_grad) {
                std::vector<T> cb(static_cast<size_t>(n));
                for (int64_t i = 0; i < n; ++i) {
                    const T x = av[a_scalar ? 0 : static_cast<size_t>(i)];
                    const T z = bv[b_scalar ? 0 : static_cast<size_t>(i)];
                    switch (kind) {
                        case BinKind::Add: cb[static_cast<size_t>(i)] = gy[i]; break;
                        case BinKind::Sub: cb[static_cast<size_t>(i)] = -gy[i]; break;
                        case BinKind::Mul: cb[static_cast<size_t>(i)] = gy[i] * x; break;
                        default: cb[static_cast<size_t>(i)] = -gy[i] * yp[i] / z; break;
                    }
                }
                scatter_add(b, cb);
            }
        });
    }
    return y;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(a, b, BinKind::Add, "add");
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(a, b, BinKind::Sub, "sub");
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(a, b, BinKind::Mul, "mul");
}
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(a, b, BinKind::Div, "div");
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, double c) {
    const T tc = static_cast<T>(c);
    return unary_op(
        x, [tc](T v) { return v + tc; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, double c) {
    const T tc = static_cast<T>(c);
    return unary_op(
        x, [tc](T v) { return v * tc; }, [tc](T, T) { return tc; });
}

// ---------------------------------------------------------------------------
// reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T acc = T(0);
    const T* xb = x.data();
    x.for_each_offset([&](int64_t off) { acc += xb[off]; });
    Tensor<T> y = Tensor<T>::scalar(acc);
    if (want_grad(x)) {
        y.requires_grad = true;
        autograd::active<T>()->record([x, y]() {
            if (!y.has_grad()) return;
            x.ensure_grad();
            const T g = y.grad_data()[0];
            T* gx = x.grad_data();
            x.for_each_offset([&](int64_t off) { gx[off] += g; });
        });
    }
    return y;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    const T inv = T(1) / static_cast<T>(x.numel());
    T acc = T(0);
    const T* xb = x.data();
    x.for_each_offset([&](int64_t off) { acc += xb[off]; });
    Tensor<T> y = Tensor<T>::scalar(acc * inv);
    if (want_grad(x)) {
        y.requires_grad = true;
        autograd::active<T>()->record([x, y, inv]() {
            if (!y.has_grad()) return;
            x.ensure_grad();
            const T g = y.grad_data()[0] * inv;
            T* gx = x.grad_data();
            x.for_each_offset([&](int64_t off) { gx[off] += g; });
        });
    }
    return y;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    check(x.rank() == 4, "global_avg_pool: input must be rank 4, got ", shape_str(x.shape()));
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const T inv = T(1) / static_cast<T>(H * W);
    Tensor<T> y = Tensor<T>::zeros({B, C, 1, 1});
    const T* xp = x.data();
    const auto& xs = x.strides();
    T* yp = y.data();
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t c = 0; c < C; ++c) {
            T acc = T(0);
            const T* plane = xp + b * xs[0] + c * xs[1];
            for (int64_t h = 0; h < H; ++h)
                for (int64_t w = 0; w < W; ++w) acc += plane[h * xs[2] + w * xs[3]];
            *yp++ = acc * inv;
        }
    }
    if (want_grad(x)) {
        y.requires_grad = true;
        autograd::active<T>()->record([x, y, inv]() {
            if (!y.has_grad()) return;
            x.ensure_grad();
            const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
            const auto& xs = x.strides();
            T* gx = x.grad_data();
            const T* gy = y.grad_data();
            for (int64_t b = 0; b < B; ++b) {
                for (int64_t c = 0; c < C; ++c) {
                    const T g = gy[b * C + c] * inv;
                    T* plane = gx + b * xs[0] + c * xs[1];
                    for (int64_t h = 0; h < H; ++h)
                        for (int64_t w = 0; w < W; ++w) plane[h * xs[2] + w * xs[3]] += g;
                }
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> mul_channel(const Tensor<T>& x, const Tensor<T>& s) {
    check(x.rank() == 4 && s.rank() == 4, "mul_channel: inputs must be rank 4");
    check(s.dim(0) == x.dim(0) && s.dim(1) == x.dim(1) && s.dim(2) == 1 && s.dim(3) == 1,
          "mul_channel: scale shape ", shape_str(s.shape()), " does not match ",
          shape_str(x.shape()));
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor<T> y = Tensor<T>::zeros({B, C, H, W});
    const T* xp = x.data();
    const auto& xs = x.strides();
    const T* sp = s.data();
    const auto& ss = s.strides();
    T* yp = y.data();
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t c = 0; c < C; ++c) {
            const T sv = sp[b * ss[0] + c * ss[1]];
            const T* plane = xp + b * xs[0] + c * xs[1];
            for (int64_t h = 0; h < H; ++h)
                for (int64_t w = 0; w < W; ++w) *yp++ = sv * plane[h * xs[2] + w * xs[3]];
        }
    }
    const bool rec = autograd::taping<T>() && (x.requires_grad || s.requires_grad);
    if (rec) {
        y.requires_grad = true;
        autograd::active<T>()->record([x, s, y]() {
            if (!y.has_grad()) return;
            const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
            const auto& xs = x.strides();
            const auto& ss = s.strides();
            const T* gy = y.grad_data();
            const T* xp = x.data();
            const T* sp = s.data();
            if (x.requires_grad) x.ensure_grad();
            if (s.requires_grad) s.ensure_grad();
            for (int64_t b = 0; b < B; ++b) {
                for (int64_t c = 0; c < C; ++c) {
                    const T sv = sp[b * ss[0] + c * ss[1]];
                    const T* gplane = gy + (b * C + c) * H * W;
                    T sacc = T(0);
                    const T* xplane = xp + b * xs[0] + c * xs[1];
                    T* gxplane = x.requires_grad ? x.grad_data() + b * xs[0] + c * xs[1] : nullptr;
                    for (int64_t h = 0; h < H; ++h) {
                        for (int64_t w = 0; w < W; ++w) {
                            const T g = gplane[h * W + w];
                            if (gxplane) gxplane[h * xs[2] + w * xs[3]] += g * sv;
                            sacc += g * xplane[h * xs[2] + w * xs[3]];
                        }
                    }
                    if (s.requires_grad) s.grad_data()[b * ss[0] + c * ss[1]] += sacc;
                }
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> normalize_sum_per_image(const Tensor<T>& x) {
    check(x.rank() == 4, "normalize_sum_per_image: input must be rank 4, got ",
          shape_str(x.shape()));
    const int64_t B = x.dim(0), per = x.numel() / x.dim(0);
    std::vector<T> sums(static_cast<size_t>(B));
    const T* xp = x.data();
    const auto& xs = x.strides();
    const int64_t C = x.dim(1), H = x.dim(2), W = x.dim(3);
    for (int64_t b = 0; b < B; ++b) {
        T acc = T(0);
        for (int64_t c = 0; c < C; ++c) {
            const T* plane = xp + b * xs[0] + c * xs[1];
            for (int64_t h = 0; h < H; ++h)
                for (int64_t w = 0; w < W; ++w) acc += plane[h * xs[2] + w * xs[3]];
        }
        check(acc > T(0), "normalize_sum_per_image: image ", b, " sums to ", acc,
              ", expected > 0");
        sums[static_cast<size_t>(b)] = acc;
    }
    Tensor<T> y = Tensor<T>::zeros(x.shape());
    T* yp = y.data();
    for (int64_t b = 0; b < B; ++b) {
        const T inv = T(1) / sums[static_cast<size_t>(b)];
        for (int64_t c = 0; c < C; ++c) {
            const T* plane = xp + b * xs[0] + c * xs[1];
            for (int64_t h = 0; h < H; ++h)
                for (int64_t w = 0; w < W; ++w) *yp++ = plane[h * xs[2] + w * xs[3]] * inv;
        }
    }
    if (want_grad(x)) {
        y.requires_grad = true;
        autograd::active<T>()->record([x, y, sums, per]() {
            if (!y.has_grad()) return;
            x.ensure_grad();
            const int64_t B = x.dim(0);
            const T* gy = y.grad_data();
            const T* yp = y.data();
            T* gx = x.grad_data();
            const auto& xs = x.strides();
            const int64_t C = x.dim(1), H = x.dim(2), W = x.dim(3);
            for (int64_t b = 0; b < B; ++b) {
                const T* gyb = gy + b * per;
                const T* yb = yp + b * per;
                T dot = T(0);
                for (int64_t i = 0; i < per; ++i) dot += gyb[i] * yb[i];
                const T inv = T(1) / sums[static_cast<size_t>(b)];
                int64_t i = 0;
                for (int64_t c = 0; c < C; ++c) {
                    T* plane = gx + b * xs[0] + c * xs[1];
                    for (int64_t h = 0; h < H; ++h)
                        for (int64_t w = 0; w < W; ++w)
                            plane[h * xs[2] + w * xs[3]] += (gyb[i++] - dot) * inv;
                }
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// batch norm

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift,
                     const Tensor<T>& running_mean, const Tensor<T>& running_var,
                     int64_t* accum_count, BnMode mode, double momentum, double eps) {
    check(x.rank() == 4, "batch_norm: input must be rank 4, got ", shape_str(x.shape()));
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    for (const auto* t : {&scale, &shift, &running_mean, &running_var})
        check(t->rank() == 1 && t->dim(0) == C, "batch_norm: per-channel tensor ",
              shape_str(t->shape()), " does not match channels ", C);

    const int64_t N = B * H * W;
    std::vector<T> mu(static_cast<size_t>(C)), var(static_cast<size_t>(C));
    const bool batch_stats = mode != BnMode::Eval;
    if (batch_stats) {
        check(N >= 2, "batch_norm: train mode needs B*H*W >= 2 per channel, got ", N);
        const T* xp = x.data();
        const auto& xs = x.strides();
        for (int64_t c = 0; c < C; ++c) {
            T acc = T(0);
            for (int64_t b = 0; b < B; ++b) {
                const T* plane = xp + b * xs[0] + c * xs[1];
                for (int64_t h = 0; h < H; ++h)
                    for (int64_t w = 0; w < W; ++w) acc += plane[h * xs[2] + w * xs[3]];
            }
            const T m = acc / static_cast<T>(N);
            T vacc = T(0);
            for (int64_t b = 0; b < B; ++b) {
                const T* plane = xp + b * xs[0] + c * xs[1];
                for (int64_t h = 0; h < H; ++h)
                    for (int64_t w = 0; w < W; ++w) {
                        const T d = plane[h * xs[2] + w * xs[3]] - m;
                        vacc += d * d;
                    }
            }
            mu[static_cast<size_t>(c)] = m;
            var[static_cast<size_t>(c)] = vacc / static_cast<T>(N);  // population variance
        }
        Tensor<T> rm = running_mean, rv = running_var;
        if (mode == BnMode::Train) {
            const T m = static_cast<T>(momentum);
            for (int64_t c = 0; c < C; ++c) {
                T& rmean = rm.data()[c * rm.strides()[0]];
                T& rvar = rv.data()[c * rv.strides()[0]];
                rmean = (T(1) - m) * rmean + m * mu[static_cast<size_t>(c)];
                rvar = (T(1) - m) * rvar + m * var[static_cast<size_t>(c)];
            }
        } else if (mode == BnMode::Accumulate) {
            check(accum_count != nullptr, "batch_norm: accumulate mode needs a counter");
            const T k = static_cast<T>(*accum_count);
            for (int64_t c = 0; c < C; ++c) {
                T& rmean = rm.data()[c * rm.strides()[0]];
                T& rvar = rv.data()[c * rv.strides()[0]];
                rmean = (rmean * k + mu[static_cast<size_t>(c)]) / (k + T(1));
                rvar = (rvar * k + var[static_cast<size_t>(c)]) / (k + T(1));
            }
            ++*accum_count;
        }
    } else {
        mu = running_mean.to_vector();
        var = running_var.to_vector();
    }

    std::vector<T> invstd(static_cast<size_t>(C));
    for (int64_t c = 0; c < C; ++c)
        invstd[static_cast<size_t>(c)] =
            T(1) / std::sqrt(var[static_cast<size_t>(c)] + static_cast<T>(eps));

    Tensor<T> y = Tensor<T>::zeros(x.shape());
    {
        const T* xp = x.data();
        const auto& xs = x.strides();
        const auto sv = scale.to_vector();
        const auto bv = shift.to_vector();
        T* yp = y.data();
        for (int64_t b = 0; b < B; ++b) {
            for (int64_t c = 0; c < C; ++c) {
                const T m = mu[static_cast<size_t>(c)], is = invstd[static_cast<size_t>(c)];
                const T sc = sv[static_cast<size_t>(c)], sh = bv[static_cast<size_t>(c)];
                const T* plane = xp + b * xs[0] + c * xs[1];
                for (int64_t h = 0; h < H; ++h)
                    for (int64_t w = 0; w < W; ++w)
                        *yp++ = sc * (plane[h * xs[2] + w * xs[3]] - m) * is + sh;
            }
        }
    }

    const bool rec = autograd::taping<T>() &&
                     (x.requires_grad || scale.requires_grad || shift.requires_grad);
    if (rec) {
        y.requires_grad = true;
        autograd::active<T>()->record([x, scale, shift, y, mu, invstd, batch_stats]() {
            if (!y.has_grad()) return;
            const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
            const int64_t N = B * H * W;
            const T* gy = y.grad_data();
            const T* xp = x.data();
            const auto& xs = x.strides();
            const auto sv = scale.to_vector();
            if (scale.requires_grad) scale.ensure_grad();
            if (shift.requires_grad) shift.ensure_grad();
            if (x.requires_grad) x.ensure_grad();
            for (int64_t c = 0; c < C; ++c) {
                const T m = mu[static_cast<size_t>(c)], is = invstd[static_cast<size_t>(c)];
                T gsum = T(0), gdot = T(0);  // sum(gy), sum(gy * xhat)
                for (int64_t b = 0; b < B; ++b) {
                    const T* plane = xp + b * xs[0] + c * xs[1];
                    const T* gplane = gy + (b * C + c) * H * W;
                    for (int64_t h = 0; h < H; ++h)
                        for (int64_t w = 0; w < W; ++w) {
                            const T g = gplane[h * W + w];
                            gsum += g;
                            gdot += g * (plane[h * xs[2] + w * xs[3]] - m) * is;
                        }
                }
                if (scale.requires_grad) scale.grad_data()[c * scale.strides()[0]] += gdot;
                if (shift.requires_grad) shift.grad_data()[c * shift.strides()[0]] += gsum;
                if (x.requires_grad) {
                    const T sc = sv[static_cast<size_t>(c)];
                    T* gxbase = x.grad_data();
                    for (int64_t b = 0; b < B; ++b) {
                        const T* plane = xp + b * xs[0] + c * xs[1];
                        const T* gplane = gy + (b * C + c) * H * W;
                        T* gxplane = gxbase + b * xs[0] + c * xs[1];
                        for (int64_t h = 0; h < H; ++h)
                            for (int64_t w = 0; w < W; ++w) {
                                const T g = gplane[h * W + w];
                                if (batch_stats) {
                                    const T xhat = (plane[h * xs[2] + w * xs[3]] - m) * is;
                                    gxplane[h * xs[2] + w * xs[3]] +=
                                        sc * is *
                                        (g - gsum / static_cast<T>(N) -
                                         xhat * gdot / static_cast<T>(N));
                                } else {
                                    gxplane[h * xs[2] + w * xs[3]] += g * sc * is;
                                }
                            }
                    }
                }
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// explicit instantiations

#define SAL_INSTANTIATE_OPS(T)                                                                     \
    template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, int, int,  \
                                 int);                                                             \
    template Tensor<T> bilinear_resize<T>(const Tensor<T>&, int64_t, int64_t);                    \
    template Tensor<T> bilinear_upsample<T>(const Tensor<T>&, int);                               \
    template Tensor<T> relu<T>(const Tensor<T>&);                                                 \
    template Tensor<T> hswish<T>(const Tensor<T>&);                                               \
    template Tensor<T> sigmoid<T>(const Tensor<T>&);                                              \
    template Tensor<T> log_op<T>(const Tensor<T>&);                                               \
    template Tensor<T> sqrt_op<T>(const Tensor<T>&);                                              \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                \
    template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                \
    template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                \
    template Tensor<T> div<T>(const Tensor<T>&, const Tensor<T>&);                                \
    template Tensor<T> add_scalar<T>(const Tensor<T>&, double);                                   \
    template Tensor<T> mul_scalar<T>(const Tensor<T>&, double);                                   \
    template Tensor<T> sum<T>(const Tensor<T>&);                                                  \
    template Tensor<T> mean<T>(const Tensor<T>&);                                                 \
    template Tensor<T> global_avg_pool<T>(const Tensor<T>&);                                      \
    template Tensor<T> mul_channel<T>(const Tensor<T>&, const Tensor<T>&);                        \
    template Tensor<T> normalize_sum_per_image<T>(const Tensor<T>&);                              \
    template Tensor<T> batch_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                                     const Tensor<T>&, const Tensor<T>&, int64_t*, BnMode,        \
                                     double, double);

SAL_INSTANTIATE_OPS(float)
SAL_INSTANTIATE_OPS(double)

}  // namespace sal
