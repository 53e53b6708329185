#pragma once

#include <string>
#include <vector>

#include "supersal/search_space.hpp"
#include "supersal/supernet.hpp"

namespace sal {

enum class CostScope { Encoder, Full };

struct LayerCost {
    std::string name;
    int64_t params = 0;
    int64_t flops = 0;
};

struct CostReport {
    int64_t params = 0;
    int64_t flops = 0;
    std::vector<LayerCost> breakdown;  // totals equal the sum of these rows
};

// Closed-form counts over the layer plan. Parameters are conv weights plus
// biases, norm affine pairs, and squeeze-excite weights at the sliced sizes
// — exactly the scalars a built net reaches through its views. FLOPS counts
// every conv as 2*H'*W'*Cout*(Cin/groups)*K^2 (one multiply-accumulate = 2
// ops) and every elementwise pass (activations, norms applied, pooling
// reads, interpolation taps, residual adds) as one op per element touched.
CostReport cost_report(const ArchConfig& config, Resolution resolution, CostScope scope);

// Parameter count is resolution-independent.
int64_t count_params(const ArchConfig& config, CostScope scope);

int64_t count_flops(const ArchConfig& config, Resolution resolution, CostScope scope);

}  // namespace sal
