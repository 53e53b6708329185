#include "supersal/losses.hpp"

namespace sal {
namespace {

template <typename T>
void check_maps(const Tensor<T>& P, const Tensor<T>& G, const char* op) {
    check(P.shape() == G.shape(), op, ": shape mismatch ", shape_str(P.shape()), " vs ",
          shape_str(G.shape()));
}

template <typename T>
bool is_constant(const Tensor<T>& t) {
    const T* p = t.data();
    T lo = p[0], hi = p[0];
    bool first = true;
    t.for_each_offset([&](int64_t off) {
        if (first) {
            lo = hi = p[off];
            first = false;
        } else {
            lo = std::min(lo, p[off]);
            hi = std::max(hi, p[off]);
        }
    });
    return lo == hi;
}

}  // namespace

template <typename T>
Tensor<T> kld_loss(const Tensor<T>& P, const Tensor<T>& G, const LossConfig& cfg) {
    check_maps(P, G, "kld_loss");
    for (const Tensor<T>* t : {&P, &G}) {
        const T* p = t->data();
        t->for_each_offset([&](int64_t off) {
            check(p[off] >= T(0), "kld_loss: negative entry ", p[off], " in ",
                  (t == &P ? "P" : "G"));
        });
    }
    Tensor<T> ratio = div(G, add_scalar(P, cfg.epsilon));
    return sum(mul(G, log_op(add_scalar(ratio, cfg.epsilon))));
}

template <typename T>
Tensor<T> cc_loss(const Tensor<T>& P, const Tensor<T>& G, const LossConfig& cfg) {
    (void)cfg;
    check_maps(P, G, "cc_loss");
    if (is_constant(P) || is_constant(G)) return Tensor<T>::scalar(T(1));
    Tensor<T> dp = sub(P, mean(P));
    Tensor<T> dg = sub(G, mean(G));
    Tensor<T> cov = mean(mul(dp, dg));
    Tensor<T> sp = sqrt_op(mean(mul(dp, dp)));
    Tensor<T> sg = sqrt_op(mean(mul(dg, dg)));
    return add_scalar(mul_scalar(div(cov, mul(sp, sg)), -1.0), 1.0);
}

template <typename T>
Tensor<T> nss_loss(const Tensor<T>& P, const Tensor<T>& F, const LossConfig& cfg) {
    check_maps(P, F, "nss_loss");
    int64_t n_fix = 0;
    {
        const T* f = F.data();
        F.for_each_offset([&](int64_t off) {
            check(f[off] == T(0) || f[off] == T(1), "nss_loss: fixation map entry ", f[off],
                  " is not binary");
            if (f[off] == T(1)) ++n_fix;
        });
    }
    check(n_fix >= 1, "nss_loss: fixation map has no fixations");

    Tensor<T> dp = sub(P, mean(P));
    Tensor<T> sd = add_scalar(sqrt_op(mean(mul(dp, dp))), cfg.std_guard);
    Tensor<T> z = div(dp, sd);
    Tensor<T> total;
    if (cfg.nss_literal_formula) {
        total = sum(sigmoid(mul(z, F)));
    } else {
        total = sum(mul(sigmoid(z), F));
    }
    return add_scalar(mul_scalar(total, -1.0 / static_cast<double>(n_fix)), 1.0);
}

template <typename T>
Tensor<T> combined_loss(const Tensor<T>& P, const Tensor<T>& G, const Tensor<T>& F,
                        const LossConfig& cfg) {
    return add(add(kld_loss(P, G, cfg), cc_loss(P, G, cfg)), nss_loss(P, F, cfg));
}

#define SAL_INSTANTIATE_LOSSES(T)                                                        \
    template Tensor<T> kld_loss<T>(const Tensor<T>&, const Tensor<T>&, const LossConfig&); \
    template Tensor<T> cc_loss<T>(const Tensor<T>&, const Tensor<T>&, const LossConfig&);  \
    template Tensor<T> nss_loss<T>(const Tensor<T>&, const Tensor<T>&, const LossConfig&); \
    template Tensor<T> combined_loss<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                        const LossConfig&);

SAL_INSTANTIATE_LOSSES(float)
SAL_INSTANTIATE_LOSSES(double)

}  // namespace sal
