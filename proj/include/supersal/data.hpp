#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "supersal/tensor.hpp"

namespace sal {

// One training example: RGB image in [0,1], ground-truth density map G
// (non-negative, sums to 1), and binary fixation map F with at least one
// fixation. G is the normalized Gaussian blur of F.
struct SaliencySample {
    TensorF image;      // [3 x H x W]
    TensorF density;    // [1 x H x W]
    TensorF fixations;  // [1 x H x W], entries 0 or 1

    void validate(int h, int w) const;
};

struct GenOptions {
    int64_t n = 16;
    int h = 32, w = 24;
    int k_min = 1, k_max = 4;       // fixations per image
    double blur_sigma = 1.5;        // density blur
    double train_fraction = 0.8;    // manifest split
    uint64_t seed = 0;
};

struct DatasetManifest {
    int64_t sample_count = 0;
    int h = 0, w = 0;
    uint64_t seed = 0;
    int generator_version = 1;
    int k_min = 0, k_max = 0;
    double blur_sigma = 0.0;
    std::vector<uint8_t> split;  // 0 = train, 1 = val, per sample
};

struct Dataset {
    DatasetManifest manifest;
    std::vector<SaliencySample> samples;

    std::vector<size_t> train_indices() const;
    std::vector<size_t> val_indices() const;
};

// Synthetic saliency task. Each sample draws k fixation points; the image is
// textured noise plus bright Gaussian blobs centered on the fixations, so
// the map is learnable from pixels. Bit-identical for a given seed.
Dataset gen_synthetic(const GenOptions& opts);

// Directory layout: manifest.json plus samples/NNNNNN.bin, each sample file
// holding three tensor records (image, density, fixations). Round-trips are
// bit-exact; loads re-validate every sample invariant.
void save_dataset(const Dataset& data, const std::string& dir);
Dataset load_dataset(const std::string& dir);

// Deterministic disjoint partition of [0, n) covering all indices, both
// sides sorted ascending. Fractions must be positive and sum to 1, and both
// sides must be non-empty.
std::pair<std::vector<size_t>, std::vector<size_t>> split_indices(size_t n, double train_fraction,
                                                                  double val_fraction,
                                                                  uint64_t seed);

// Stacks samples into batch tensors [B x 3 x H x W], [B x 1 x H x W] x2.
struct Batch {
    TensorF images, density, fixations;
};
Batch make_batch(const Dataset& data, const std::vector<size_t>& indices, size_t begin,
                 size_t count);

}  // namespace sal
