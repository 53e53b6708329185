#pragma once

#include "supersal/autograd.hpp"
#include "supersal/tensor.hpp"

namespace sal {

// Dense operator set for the encoder-decoder nets. All ops are pure
// functions of their inputs (bit-identical on identical inputs), run
// single-threaded with a fixed reduction order, and record a backward node
// on the active tape when any input requires gradients.
//
// Guarded divisions: batch_norm uses var+eps under the root; normalize_sum
// requires a strictly positive per-image sum (callers feed sigmoid outputs);
// sqrt_op returns a zero gradient at exactly 0.

// Cross-correlation. weight is [Cout x Cin/groups x K x K], K odd.
// Per output element the reduction runs input-channel outer, kernel window
// inner; bias is added last. The direct-loop oracle with the same order
// reproduces it bit for bit.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias,
                 int stride, int padding, int groups);

// Bilinear interpolation with half-pixel centers (align-corners = false).
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& input, int64_t out_h, int64_t out_w);

template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& input, int factor);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

// x * min(max(x+3, 0), 6) / 6
template <typename T>
Tensor<T> hswish(const Tensor<T>& x);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);

template <typename T>
Tensor<T> log_op(const Tensor<T>& x);

// Gradient is 0.5/sqrt(x) for x > 0 and 0 at x == 0 (keeps dead maps from
// producing non-finite gradients in the std pipeline).
template <typename T>
Tensor<T> sqrt_op(const Tensor<T>& x);

// Binary elementwise ops; shapes must match, or one side may be a scalar
// tensor (numel 1) which broadcasts.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, double c);
template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, double c);

// Full reductions to a [1] tensor, flat row-major accumulation order.
template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

// [B x C x H x W] -> [B x C x 1 x 1], per-channel spatial mean.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

// Squeeze-excite style scale: x [B x C x H x W] * s [B x C x 1 x 1].
template <typename T>
Tensor<T> mul_channel(const Tensor<T>& x, const Tensor<T>& s);

// Divides each image (all channels and pixels of one batch element) by its
// sum, making every image a distribution. Sum must be > 0.
template <typename T>
Tensor<T> normalize_sum_per_image(const Tensor<T>& x);

// Contiguous copy with no gradient path.
template <typename T>
Tensor<T> detach(const Tensor<T>& x) {
    return x.clone();
}

enum class BnMode {
    Train,       // batch stats + running-stat update (momentum)
    Batch,       // batch stats, no state mutation (gradient checks)
    Eval,        // running stats
    Accumulate,  // batch stats; running stats become the cumulative mean of
                 // batch stats across calls (teacher recalibration)
};

// scale/shift/running_mean/running_var are per-channel [C] tensors; the
// running tensors are written through (they may be store views). Train-like
// modes need B*H*W >= 2. eps sits inside the square root.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift,
                     const Tensor<T>& running_mean, const Tensor<T>& running_var,
                     int64_t* accum_count, BnMode mode, double momentum = 0.1, double eps = 1e-5);

}  // namespace sal
