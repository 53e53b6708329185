#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "supersal/data.hpp"
#include "supersal/io.hpp"
#include "supersal/rng.hpp"

using namespace sal;
namespace fs = std::filesystem;

namespace {

GenOptions small_opts(uint64_t seed = 3) {
    GenOptions o;
    o.n = 10;
    o.h = 16;
    o.w = 12;
    o.k_min = 1;
    o.k_max = 3;
    o.blur_sigma = 1.0;
    o.seed = seed;
    return o;
}

struct TempDir {
    fs::path path;
    TempDir() : path(fs::temp_directory_path() / ("supersal_test_" + std::to_string(::getpid()) +
                                                  "_" + std::to_string(counter++))) {
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static inline int counter = 0;
};

}  // namespace

TEST_CASE("generated densities sum to one and are positive exactly on the blur support") {
    const GenOptions o = small_opts();
    Dataset d = gen_synthetic(o);
    const int radius = static_cast<int>(std::ceil(3.0 * o.blur_sigma));
    for (const SaliencySample& s : d.samples) {
        double sum = 0.0;
        const float* g = s.density.data();
        for (int64_t i = 0; i < s.density.numel(); ++i) sum += g[i];
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));

        // Support = union of clipped boxes around fixations.
        const float* f = s.fixations.data();
        std::vector<bool> support(static_cast<size_t>(o.h * o.w), false);
        for (int y = 0; y < o.h; ++y)
            for (int x = 0; x < o.w; ++x)
                if (f[y * o.w + x] == 1.0f)
                    for (int dy = -radius; dy <= radius; ++dy)
                        for (int dx = -radius; dx <= radius; ++dx) {
                            const int yy = y + dy, xx = x + dx;
                            if (yy >= 0 && yy < o.h && xx >= 0 && xx < o.w)
                                support[static_cast<size_t>(yy * o.w + xx)] = true;
                        }
        for (int64_t i = 0; i < s.density.numel(); ++i)
            CHECK((g[i] > 0.0f) == support[static_cast<size_t>(i)]);
    }
}

TEST_CASE("generation is bit-identical per seed and differs across seeds") {
    Dataset a = gen_synthetic(small_opts(3));
    Dataset b = gen_synthetic(small_opts(3));
    Dataset c = gen_synthetic(small_opts(4));
    REQUIRE(a.samples.size() == b.samples.size());
    bool any_diff = false;
    for (size_t i = 0; i < a.samples.size(); ++i) {
        CHECK(a.samples[i].image.to_vector() == b.samples[i].image.to_vector());
        CHECK(a.samples[i].density.to_vector() == b.samples[i].density.to_vector());
        CHECK(a.samples[i].fixations.to_vector() == b.samples[i].fixations.to_vector());
        if (a.samples[i].image.to_vector() != c.samples[i].image.to_vector()) any_diff = true;
    }
    CHECK(any_diff);
    CHECK(a.manifest.split == b.manifest.split);
}

TEST_CASE("single-fixation samples peak exactly at the fixation") {
    GenOptions o = small_opts(9);
    o.k_min = o.k_max = 1;
    Dataset d = gen_synthetic(o);
    for (const SaliencySample& s : d.samples) {
        const float* g = s.density.data();
        const float* f = s.fixations.data();
        int64_t argmax = 0;
        for (int64_t i = 1; i < s.density.numel(); ++i)
            if (g[i] > g[argmax]) argmax = i;
        CHECK(f[argmax] == 1.0f);
    }
}

TEST_CASE("fixation counts stay inside the configured range") {
    GenOptions o = small_opts(11);
    o.n = 100;
    o.k_min = 2;
    o.k_max = 5;
    Dataset d = gen_synthetic(o);
    double total = 0.0;
    for (const SaliencySample& s : d.samples) {
        int64_t n_fix = 0;
        const float* f = s.fixations.data();
        for (int64_t i = 0; i < s.fixations.numel(); ++i) n_fix += f[i] == 1.0f;
        CHECK(n_fix >= 2);
        CHECK(n_fix <= 5);
        total += static_cast<double>(n_fix);
    }
    const double mean = total / 100.0;
    CHECK(mean >= 2.0);
    CHECK(mean <= 5.0);
}

TEST_CASE("save and load round-trip bit-exactly") {
    TempDir dir;
    Dataset d = gen_synthetic(small_opts(5));
    save_dataset(d, dir.path.string());
    Dataset l = load_dataset(dir.path.string());
    REQUIRE(l.samples.size() == d.samples.size());
    CHECK(l.manifest.split == d.manifest.split);
    CHECK(l.manifest.seed == d.manifest.seed);
    for (size_t i = 0; i < d.samples.size(); ++i) {
        CHECK(l.samples[i].image.to_vector() == d.samples[i].image.to_vector());
        CHECK(l.samples[i].density.to_vector() == d.samples[i].density.to_vector());
        CHECK(l.samples[i].fixations.to_vector() == d.samples[i].fixations.to_vector());
    }
}

TEST_CASE("a truncated sample file reports expected vs actual byte counts") {
    TempDir dir;
    Dataset d = gen_synthetic(small_opts(6));
    save_dataset(d, dir.path.string());
    const fs::path victim = dir.path / "samples" / "000003.bin";
    const auto full_size = fs::file_size(victim);
    fs::resize_file(victim, full_size - 100);
    try {
        load_dataset(dir.path.string());
        FAIL("expected a truncation error");
    } catch (const Error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("truncated") != std::string::npos);
        CHECK(msg.find("expected") != std::string::npos);
        CHECK(msg.find("available") != std::string::npos);
    }
}

TEST_CASE("a corrupt magic header is rejected") {
    TempDir dir;
    Dataset d = gen_synthetic(small_opts(7));
    save_dataset(d, dir.path.string());
    const fs::path victim = dir.path / "samples" / "000000.bin";
    {
        std::fstream f(victim, std::ios::in | std::ios::out | std::ios::binary);
        f.put('X');
    }
    CHECK_THROWS_WITH_AS(load_dataset(dir.path.string()), doctest::Contains("bad magic"), Error);
}

TEST_CASE("tensor records round-trip through a stream") {
    Rng rng(8);
    std::vector<float> vals;
    for (int i = 0; i < 24; ++i) vals.push_back(static_cast<float>(rng.normal()));
    TensorF t = TensorF::from_data({2, 3, 4}, std::move(vals));
    std::stringstream ss;
    write_tensor_record(ss, t);
    TensorF back = read_tensor_record<float>(ss, "test");
    CHECK(back.shape() == t.shape());
    CHECK(back.to_vector() == t.to_vector());
}

TEST_CASE("split is a deterministic disjoint cover with the requested sizes") {
    auto [train, val] = split_indices(10, 0.8, 0.2, 42);
    CHECK(train.size() == 8);
    CHECK(val.size() == 2);
    std::vector<bool> seen(10, false);
    for (size_t i : train) seen[i] = true;
    for (size_t i : val) {
        CHECK_FALSE(seen[i]);
        seen[i] = true;
    }
    for (bool b : seen) CHECK(b);

    auto [t2, v2] = split_indices(10, 0.8, 0.2, 42);
    CHECK(t2 == train);
    CHECK(v2 == val);
    auto [t3, v3] = split_indices(10, 0.8, 0.2, 43);
    CHECK(t3 != train);

    CHECK_THROWS_WITH_AS(split_indices(10, 1.0, 0.0, 1),
                         doctest::Contains("validation split"), Error);
    CHECK_THROWS_AS(split_indices(10, 0.7, 0.2, 1), Error);  // fractions must sum to 1
}

TEST_CASE("generator rejects degenerate settings") {
    GenOptions o = small_opts();
    o.h = 4;
    CHECK_THROWS_WITH_AS(gen_synthetic(o), doctest::Contains("below 8x8"), Error);
    o = small_opts();
    o.n = 1;
    CHECK_THROWS_AS(gen_synthetic(o), Error);
}

TEST_CASE("make_batch stacks samples in index order") {
    Dataset d = gen_synthetic(small_opts(12));
    Batch b = make_batch(d, {2, 5, 7}, 0, 3);
    CHECK(b.images.shape() == Shape{3, 3, 16, 12});
    CHECK(b.density.shape() == Shape{3, 1, 16, 12});
    const auto want = d.samples[5].density.to_vector();
    const auto got = b.density.narrow(0, 1, 1).to_vector();
    CHECK(got == want);
}
