#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "supersal/rng.hpp"

namespace sal {

struct Resolution {
    int h = 0;
    int w = 0;
    bool operator==(const Resolution&) const = default;
    int64_t area() const { return int64_t{h} * w; }
};

// One MBConv stage row of the search table: the selectable widths, depths,
// kernel sizes and expansion ratios, plus the fixed squeeze-excite flag and
// stride for that stage.
struct BlockSpace {
    std::string name;
    std::vector<int> widths;
    std::vector<int> depths;
    std::vector<int> kernels;
    std::vector<int> expansions;
    bool squeeze_excite = false;
    int stride = 1;
};

// The full elastic space: stem width, seven MBConv stages, encoder head
// width, and the input resolutions. Strides are structural (2 for the stem,
// then 1,2,2,2,1,2,1 across the stages, 1 for the head).
struct SearchSpace {
    std::string name;
    std::vector<int> first_conv_widths;  // 3x3, stride 2
    std::vector<BlockSpace> blocks;      // exactly 7
    std::vector<int> last_conv_widths;   // 1x1, stride 1
    std::vector<Resolution> resolutions;

    // The production table. Smallest subnet lands near 4.97M encoder
    // parameters, largest near 19.38M.
    static SearchSpace table1();

    // Tiny space with the same stage structure (strides, SE flags) for
    // experiments that must run in seconds on one core. Resolutions 32x24
    // and 64x48.
    static SearchSpace desk();

    void validate() const;

    // log10 of subnet count when every layer picks kernel/expansion
    // independently (the per-layer counting that puts the table above 1e19).
    double log10_subnet_count_per_layer() const;
};

struct BlockChoice {
    int width = 0;
    int depth = 0;
    int kernel = 0;
    int expansion = 0;
    bool operator==(const BlockChoice&) const = default;
};

// One subnet: a choice per elastic dimension. First conv kernel is fixed at
// 3 and last conv kernel at 1, so only their widths appear.
struct ArchConfig {
    Resolution resolution;
    int first_conv_width = 0;
    std::vector<BlockChoice> blocks;
    int last_conv_width = 0;
    bool operator==(const ArchConfig&) const = default;
};

enum class SampleMode { Min, Max, UniformRandom };

// Min picks the least choice per dimension, Max the greatest, UniformRandom
// draws each dimension independently. Deterministic given the rng state.
ArchConfig sample_subnet(const SearchSpace& space, SampleMode mode, Rng& rng);

inline ArchConfig sample_subnet(const SearchSpace& space, SampleMode mode, uint64_t seed) {
    Rng rng = Rng(seed).fork("sample-subnet");
    return sample_subnet(space, mode, rng);
}

// Membership of every field in the corresponding choice list.
bool config_in_space(const SearchSpace& space, const ArchConfig& config);

// Throws naming the first offending field.
void validate_config(const SearchSpace& space, const ArchConfig& config);

uint64_t config_hash(const ArchConfig& config);

// Fixed-key-order JSON: resolution, first_conv_width, blocks, last_conv_width.
std::string arch_to_json(const ArchConfig& config);
ArchConfig arch_from_json(const std::string& text);
void save_arch(const ArchConfig& config, const std::string& path);
ArchConfig load_arch(const std::string& path);

}  // namespace sal
