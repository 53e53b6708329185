#pragma once

#include "supersal/ops.hpp"
#include "supersal/tensor.hpp"

namespace sal {

// Range-adjusted training losses. All three are differentiable with respect
// to P wherever their preconditions hold and return scalar tensors on the
// active tape.
struct LossConfig {
    double epsilon = 1e-8;    // inside the KLD log, keeps it finite at P = 0
    double std_guard = 1e-8;  // added to std(P) so a constant map cannot divide by zero
    // Sum sigmoid(zscore * F) over every pixel instead of restricting to
    // fixated pixels. Off by default: the fixated-only reading matches
    // "average normalized saliency at a fixated location".
    bool nss_literal_formula = false;
};

// sum_i G_i * log(eps + G_i / (P_i + eps)). Non-negative up to the eps guard.
template <typename T>
Tensor<T> kld_loss(const Tensor<T>& P, const Tensor<T>& G, const LossConfig& cfg);

// 1 - covar(P,G) / (sigma(P) * sigma(G)), population statistics. Range
// [0, 2]; returns exactly 1 when either map is constant (zero correlation
// convention, so a dead network still trains).
template <typename T>
Tensor<T> cc_loss(const Tensor<T>& P, const Tensor<T>& G, const LossConfig& cfg);

// 1 - mean over fixated pixels of sigmoid(zscore(P)), z-scored with the
// population std plus std_guard. Strictly inside (0, 1). F must be binary
// with at least one fixation.
template <typename T>
Tensor<T> nss_loss(const Tensor<T>& P, const Tensor<T>& F, const LossConfig& cfg);

// kld + cc + nss, exact sum of the component values.
template <typename T>
Tensor<T> combined_loss(const Tensor<T>& P, const Tensor<T>& G, const Tensor<T>& F,
                        const LossConfig& cfg);

}  // namespace sal
