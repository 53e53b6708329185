#include "supersal/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "supersal/io.hpp"
#include "supersal/rng.hpp"

namespace fs = std::filesystem;

namespace sal {

void SaliencySample::validate(int h, int w) const {
    check(image.shape() == Shape({3, h, w}), "sample: image shape ", shape_str(image.shape()),
          " does not match manifest resolution ", h, "x", w);
    check(density.shape() == Shape({1, h, w}), "sample: density shape ",
          shape_str(density.shape()), " does not match manifest resolution");
    check(fixations.shape() == Shape({1, h, w}), "sample: fixation shape ",
          shape_str(fixations.shape()), " does not match manifest resolution");
    const float* img = image.data();
    for (int64_t i = 0; i < image.numel(); ++i)
        check(img[i] >= 0.0f && img[i] <= 1.0f, "sample: image value ", img[i],
              " outside [0, 1]");
    double gsum = 0.0;
    const float* g = density.data();
    for (int64_t i = 0; i < density.numel(); ++i) {
        check(g[i] >= 0.0f, "sample: negative density value ", g[i]);
        gsum += g[i];
    }
    check(std::abs(gsum - 1.0) < 1e-4, "sample: density sums to ", gsum, ", expected 1");
    int64_t n_fix = 0;
    const float* f = fixations.data();
    for (int64_t i = 0; i < fixations.numel(); ++i) {
        check(f[i] == 0.0f || f[i] == 1.0f, "sample: fixation value ", f[i], " is not binary");
        if (f[i] == 1.0f) ++n_fix;
    }
    check(n_fix >= 1 && n_fix <= static_cast<int64_t>(h) * w - 1, "sample: fixation count ",
          n_fix, " outside [1, ", static_cast<int64_t>(h) * w - 1, "]");
}

std::vector<size_t> Dataset::train_indices() const {
    std::vector<size_t> out;
    for (size_t i = 0; i < manifest.split.size(); ++i)
        if (manifest.split[i] == 0) out.push_back(i);
    return out;
}

std::vector<size_t> Dataset::val_indices() const {
    std::vector<size_t> out;
    for (size_t i = 0; i < manifest.split.size(); ++i)
        if (manifest.split[i] == 1) out.push_back(i);
    return out;
}

Dataset gen_synthetic(const GenOptions& opts) {
    check(opts.n >= 2, "gen_synthetic: need at least 2 samples, got ", opts.n);
    check(opts.h >= 8 && opts.w >= 8, "gen_synthetic: resolution ", opts.h, "x", opts.w,
          " below 8x8");
    check(opts.k_min >= 1 && opts.k_max >= opts.k_min, "gen_synthetic: bad fixation range [",
          opts.k_min, ", ", opts.k_max, "]");
    check(static_cast<int64_t>(opts.k_max) < static_cast<int64_t>(opts.h) * opts.w,
          "gen_synthetic: k_max ", opts.k_max, " too large for ", opts.h, "x", opts.w);
    check(opts.blur_sigma > 0.0, "gen_synthetic: blur sigma must be positive");

    Dataset data;
    data.manifest.sample_count = opts.n;
    data.manifest.h = opts.h;
    data.manifest.w = opts.w;
    data.manifest.seed = opts.seed;
    data.manifest.k_min = opts.k_min;
    data.manifest.k_max = opts.k_max;
    data.manifest.blur_sigma = opts.blur_sigma;

    const Rng root(opts.seed);
    const int64_t hw = static_cast<int64_t>(opts.h) * opts.w;
    const int radius = static_cast<int>(std::ceil(3.0 * opts.blur_sigma));
    const double img_sigma = 2.0 * opts.blur_sigma;
    const int img_radius = static_cast<int>(std::ceil(3.0 * img_sigma));

    for (int64_t s = 0; s < opts.n; ++s) {
        Rng rng = root.fork("sample").fork(static_cast<uint64_t>(s));
        const int k = opts.k_min + static_cast<int>(rng.next_below(
                                       static_cast<uint64_t>(opts.k_max - opts.k_min + 1)));
        std::vector<std::pair<int, int>> points;
        while (static_cast<int>(points.size()) < k) {
            const int y = static_cast<int>(rng.next_below(static_cast<uint64_t>(opts.h)));
            const int x = static_cast<int>(rng.next_below(static_cast<uint64_t>(opts.w)));
            if (std::find(points.begin(), points.end(), std::make_pair(y, x)) == points.end())
                points.emplace_back(y, x);
        }

        std::vector<float> fix(static_cast<size_t>(hw), 0.0f);
        for (const auto& [y, x] : points) fix[static_cast<size_t>(y * opts.w + x)] = 1.0f;

        std::vector<double> dens(static_cast<size_t>(hw), 0.0);
        for (const auto& [fy, fx] : points) {
            for (int dy = -radius; dy <= radius; ++dy) {
                const int y = fy + dy;
                if (y < 0 || y >= opts.h) continue;
                for (int dx = -radius; dx <= radius; ++dx) {
                    const int x = fx + dx;
                    if (x < 0 || x >= opts.w) continue;
                    dens[static_cast<size_t>(y * opts.w + x)] +=
                        std::exp(-(dy * dy + dx * dx) / (2.0 * opts.blur_sigma * opts.blur_sigma));
                }
            }
        }
        double total = 0.0;
        for (double v : dens) total += v;
        std::vector<float> densf(static_cast<size_t>(hw));
        for (int64_t i = 0; i < hw; ++i)
            densf[static_cast<size_t>(i)] = static_cast<float>(dens[static_cast<size_t>(i)] / total);

        std::vector<float> img(static_cast<size_t>(3 * hw));
        for (int c = 0; c < 3; ++c)
            for (int64_t i = 0; i < hw; ++i)
                img[static_cast<size_t>(c * hw + i)] =
                    static_cast<float>(0.05 + 0.25 * rng.next_double());
        for (const auto& [fy, fx] : points) {
            double amp[3];
            for (double& a : amp) a = 0.5 + 0.5 * rng.next_double();
            for (int dy = -img_radius; dy <= img_radius; ++dy) {
                const int y = fy + dy;
                if (y < 0 || y >= opts.h) continue;
                for (int dx = -img_radius; dx <= img_radius; ++dx) {
                    const int x = fx + dx;
                    if (x < 0 || x >= opts.w) continue;
                    const double fall =
                        std::exp(-(dy * dy + dx * dx) / (2.0 * img_sigma * img_sigma));
                    for (int c = 0; c < 3; ++c) {
                        float& px = img[static_cast<size_t>(c * hw + y * opts.w + x)];
                        px = static_cast<float>(
                            std::min(1.0, static_cast<double>(px) + amp[c] * fall));
                    }
                }
            }
        }

        SaliencySample sample;
        sample.image = TensorF::from_data({3, opts.h, opts.w}, std::move(img));
        sample.density = TensorF::from_data({1, opts.h, opts.w}, std::move(densf));
        sample.fixations = TensorF::from_data({1, opts.h, opts.w}, std::move(fix));
        sample.validate(opts.h, opts.w);
        data.samples.push_back(std::move(sample));
    }

    auto [train, val] = split_indices(static_cast<size_t>(opts.n), opts.train_fraction,
                                      1.0 - opts.train_fraction, Rng(opts.seed).fork("split").next_u64());
    data.manifest.split.assign(static_cast<size_t>(opts.n), 0);
    for (size_t i : val) data.manifest.split[i] = 1;
    return data;
}

std::pair<std::vector<size_t>, std::vector<size_t>> split_indices(size_t n, double train_fraction,
                                                                  double val_fraction,
                                                                  uint64_t seed) {
    check(train_fraction > 0.0 && val_fraction > 0.0, "split: fractions must be positive, got ",
          train_fraction, " and ", val_fraction, " (a non-empty validation split is required)");
    check(std::abs(train_fraction + val_fraction - 1.0) < 1e-9, "split: fractions sum to ",
          train_fraction + val_fraction, ", expected 1");
    check(n >= 2, "split: need at least 2 samples, got ", n);
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng = Rng(seed).fork("shuffle");
    for (size_t i = n; i-- > 1;) std::swap(order[i], order[rng.next_below(i + 1)]);
    size_t n_train = static_cast<size_t>(std::llround(static_cast<double>(n) * train_fraction));
    n_train = std::min(std::max<size_t>(n_train, 1), n - 1);
    std::vector<size_t> train(order.begin(), order.begin() + static_cast<int64_t>(n_train));
    std::vector<size_t> val(order.begin() + static_cast<int64_t>(n_train), order.end());
    std::sort(train.begin(), train.end());
    std::sort(val.begin(), val.end());
    return {train, val};
}

namespace {
std::string sample_filename(int64_t i) {
    std::string s = std::to_string(i);
    return std::string(6 - std::min<size_t>(6, s.size()), '0') + s + ".bin";
}
}  // namespace

void save_dataset(const Dataset& data, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "samples");
    nlohmann::ordered_json j;
    j["sample_count"] = data.manifest.sample_count;
    j["resolution"] = {data.manifest.h, data.manifest.w};
    j["seed"] = data.manifest.seed;
    j["generator_version"] = data.manifest.generator_version;
    j["k_fixations"] = {data.manifest.k_min, data.manifest.k_max};
    j["blur_sigma"] = data.manifest.blur_sigma;
    j["split"] = nlohmann::ordered_json::array();
    for (uint8_t s : data.manifest.split) j["split"].push_back(s == 0 ? "train" : "val");
    write_text_file((fs::path(dir) / "manifest.json").string(), j.dump(2) + "\n");

    check(data.samples.size() == static_cast<size_t>(data.manifest.sample_count),
          "save_dataset: manifest count ", data.manifest.sample_count, " vs ",
          data.samples.size(), " samples");
    for (size_t i = 0; i < data.samples.size(); ++i) {
        const std::string path =
            (fs::path(dir) / "samples" / sample_filename(static_cast<int64_t>(i))).string();
        std::ofstream out(path, std::ios::binary);
        check(out.good(), "save_dataset: cannot open ", path);
        write_tensor_record(out, data.samples[i].image);
        write_tensor_record(out, data.samples[i].density);
        write_tensor_record(out, data.samples[i].fixations);
    }
}

Dataset load_dataset(const std::string& dir) {
    const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(manifest_path));
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        raise("manifest ", manifest_path, ": parse failure: ", e.what());
    }
    Dataset data;
    try {
        data.manifest.sample_count = j.at("sample_count").get<int64_t>();
        data.manifest.h = j.at("resolution").at(0).get<int>();
        data.manifest.w = j.at("resolution").at(1).get<int>();
        data.manifest.seed = j.at("seed").get<uint64_t>();
        data.manifest.generator_version = j.at("generator_version").get<int>();
        data.manifest.k_min = j.at("k_fixations").at(0).get<int>();
        data.manifest.k_max = j.at("k_fixations").at(1).get<int>();
        data.manifest.blur_sigma = j.at("blur_sigma").get<double>();
        for (const auto& s : j.at("split"))
            data.manifest.split.push_back(s.get<std::string>() == "val" ? 1 : 0);
    } catch (const std::exception& e) {
        raise("manifest ", manifest_path, ": missing or malformed field: ", e.what());
    }
    check(static_cast<int64_t>(data.manifest.split.size()) == data.manifest.sample_count,
          "manifest ", manifest_path, ": split list length ", data.manifest.split.size(),
          " does not match sample count ", data.manifest.sample_count);

    for (int64_t i = 0; i < data.manifest.sample_count; ++i) {
        const std::string path = (fs::path(dir) / "samples" / sample_filename(i)).string();
        std::ifstream in(path, std::ios::binary);
        check(in.good(), "load_dataset: cannot open ", path);
        SaliencySample s;
        s.image = read_tensor_record<float>(in, path);
        s.density = read_tensor_record<float>(in, path);
        s.fixations = read_tensor_record<float>(in, path);
        s.validate(data.manifest.h, data.manifest.w);
        data.samples.push_back(std::move(s));
    }
    return data;
}

Batch make_batch(const Dataset& data, const std::vector<size_t>& indices, size_t begin,
                 size_t count) {
    check(begin + count <= indices.size(), "make_batch: window [", begin, ", ", begin + count,
          ") exceeds ", indices.size(), " indices");
    const int64_t h = data.manifest.h, w = data.manifest.w;
    const int64_t hw = h * w;
    std::vector<float> img(static_cast<size_t>(count * 3 * hw));
    std::vector<float> dens(static_cast<size_t>(count * hw));
    std::vector<float> fix(static_cast<size_t>(count * hw));
    for (size_t b = 0; b < count; ++b) {
        const SaliencySample& s = data.samples.at(indices[begin + b]);
        const auto iv = s.image.to_vector();
        const auto dv = s.density.to_vector();
        const auto fv = s.fixations.to_vector();
        std::copy(iv.begin(), iv.end(), img.begin() + static_cast<int64_t>(b) * 3 * hw);
        std::copy(dv.begin(), dv.end(), dens.begin() + static_cast<int64_t>(b) * hw);
        std::copy(fv.begin(), fv.end(), fix.begin() + static_cast<int64_t>(b) * hw);
    }
    Batch out;
    out.images = TensorF::from_data({static_cast<int64_t>(count), 3, h, w}, std::move(img));
    out.density = TensorF::from_data({static_cast<int64_t>(count), 1, h, w}, std::move(dens));
    out.fixations = TensorF::from_data({static_cast<int64_t>(count), 1, h, w}, std::move(fix));
    return out;
}

}  // namespace sal
