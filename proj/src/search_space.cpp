#include "supersal/search_space.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "supersal/common.hpp"

namespace sal {

SearchSpace SearchSpace::table1() {
    SearchSpace s;
    s.name = "table1";
    s.first_conv_widths = {16, 24};
    s.blocks = {
        {"mbconv-1", {16, 24}, {1, 2}, {3, 5}, {1}, false, 1},
        {"mbconv-2", {24, 32}, {3, 4, 5}, {3, 5}, {4, 5, 6}, false, 2},
        {"mbconv-3", {32, 40}, {3, 4, 5, 6}, {3, 5}, {4, 5, 6}, true, 2},
        {"mbconv-4", {62, 70}, {3, 4, 5, 6}, {3, 5}, {4, 5, 6}, false, 2},
        {"mbconv-5", {112, 120, 128}, {3, 4, 5, 6, 7, 8}, {3, 5}, {4, 5, 6}, true, 1},
        {"mbconv-6", {192, 200, 208, 216}, {3, 4, 5, 6, 7, 8}, {3, 5}, {6}, true, 2},
        {"mbconv-7", {216, 224}, {1, 2}, {3, 5}, {6}, true, 1},
    };
    s.last_conv_widths = {1296, 1344};
    s.resolutions = {{256, 192}, {384, 288}};
    s.validate();
    return s;
}

SearchSpace SearchSpace::desk() {
    SearchSpace s;
    s.name = "desk";
    s.first_conv_widths = {8};
    s.blocks = {
        {"mbconv-1", {8}, {1}, {3, 5}, {1}, false, 1},
        {"mbconv-2", {8, 12}, {1, 2}, {3, 5}, {1, 2}, false, 2},
        {"mbconv-3", {12, 16}, {1, 2}, {3, 5}, {1, 2}, true, 2},
        {"mbconv-4", {16, 24}, {1, 2}, {3, 5}, {1, 2}, false, 2},
        {"mbconv-5", {16, 24}, {1, 2}, {3, 5}, {1, 2}, true, 1},
        {"mbconv-6", {24, 32}, {1, 2}, {3, 5}, {2}, true, 2},
        {"mbconv-7", {24, 32}, {1}, {3, 5}, {2}, true, 1},
    };
    s.last_conv_widths = {48, 64};
    s.resolutions = {{32, 24}, {64, 48}};
    s.validate();
    return s;
}

namespace {
const int kStageStrides[7] = {1, 2, 2, 2, 1, 2, 1};
const bool kStageSe[7] = {false, false, true, false, true, true, true};

void check_sorted(const std::vector<int>& v, const std::string& what) {
    check(!v.empty(), "search space: ", what, " has no choices");
    check(std::is_sorted(v.begin(), v.end()) && std::adjacent_find(v.begin(), v.end()) == v.end(),
          "search space: ", what, " choices must be strictly ascending");
    for (int x : v) check(x >= 1, "search space: ", what, " has non-positive choice ", x);
}
}  // namespace

void SearchSpace::validate() const {
    check(blocks.size() == 7, "search space: expected 7 mbconv blocks, got ", blocks.size());
    check_sorted(first_conv_widths, "first-conv width");
    check_sorted(last_conv_widths, "last-conv width");
    for (size_t i = 0; i < blocks.size(); ++i) {
        const BlockSpace& b = blocks[i];
        check_sorted(b.widths, b.name + " width");
        check_sorted(b.depths, b.name + " depth");
        check_sorted(b.kernels, b.name + " kernel");
        check_sorted(b.expansions, b.name + " expansion");
        for (int k : b.kernels) check(k % 2 == 1, "search space: ", b.name, " kernel ", k, " is even");
        check(b.stride == kStageStrides[i], "search space: ", b.name, " stride ", b.stride,
              " does not match the fixed stage stride ", kStageStrides[i]);
        check(b.squeeze_excite == kStageSe[i], "search space: ", b.name,
              " squeeze-excite flag does not match the fixed stage layout");
    }
    check(!resolutions.empty(), "search space: no input resolutions");
    for (size_t i = 0; i + 1 < resolutions.size(); ++i)
        check(resolutions[i].area() < resolutions[i + 1].area(),
              "search space: resolutions must be sorted ascending by area");
    for (const Resolution& r : resolutions)
        check(r.h >= 8 && r.w >= 8, "search space: resolution ", r.h, "x", r.w, " below 8x8");
}

double SearchSpace::log10_subnet_count_per_layer() const {
    double total = std::log10(static_cast<double>(first_conv_widths.size())) +
                   std::log10(static_cast<double>(last_conv_widths.size())) +
                   std::log10(static_cast<double>(resolutions.size()));
    for (const BlockSpace& b : blocks) {
        const double per_layer = static_cast<double>(b.kernels.size() * b.expansions.size());
        double variants = 0.0;
        for (int d : b.depths) variants += std::pow(per_layer, d);
        total += std::log10(static_cast<double>(b.widths.size()) * variants);
    }
    return total;
}

ArchConfig sample_subnet(const SearchSpace& space, SampleMode mode, Rng& rng) {
    space.validate();
    auto pick = [&](const std::vector<int>& v) {
        switch (mode) {
            case SampleMode::Min: return v.front();
            case SampleMode::Max: return v.back();
            default: return v[rng.next_below(v.size())];
        }
    };
    ArchConfig c;
    switch (mode) {
        case SampleMode::Min: c.resolution = space.resolutions.front(); break;
        case SampleMode::Max: c.resolution = space.resolutions.back(); break;
        default: c.resolution = space.resolutions[rng.next_below(space.resolutions.size())]; break;
    }
    c.first_conv_width = pick(space.first_conv_widths);
    for (const BlockSpace& b : space.blocks)
        c.blocks.push_back({pick(b.widths), pick(b.depths), pick(b.kernels), pick(b.expansions)});
    c.last_conv_width = pick(space.last_conv_widths);
    return c;
}

bool config_in_space(const SearchSpace& space, const ArchConfig& config) {
    auto in = [](const std::vector<int>& v, int x) {
        return std::find(v.begin(), v.end(), x) != v.end();
    };
    if (config.blocks.size() != space.blocks.size()) return false;
    if (std::find(space.resolutions.begin(), space.resolutions.end(), config.resolution) ==
        space.resolutions.end())
        return false;
    if (!in(space.first_conv_widths, config.first_conv_width)) return false;
    if (!in(space.last_conv_widths, config.last_conv_width)) return false;
    for (size_t i = 0; i < space.blocks.size(); ++i) {
        const BlockSpace& b = space.blocks[i];
        const BlockChoice& c = config.blocks[i];
        if (!in(b.widths, c.width) || !in(b.depths, c.depth) || !in(b.kernels, c.kernel) ||
            !in(b.expansions, c.expansion))
            return false;
    }
    return true;
}

void validate_config(const SearchSpace& space, const ArchConfig& config) {
    check(config.blocks.size() == space.blocks.size(), "config: expected ", space.blocks.size(),
          " blocks, got ", config.blocks.size());
    check(config_in_space(space, config), "config: not a member of search space '", space.name,
          "'");
}

uint64_t config_hash(const ArchConfig& config) {
    uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](int64_t v) {
        h ^= static_cast<uint64_t>(v);
        h *= 0x100000001b3ULL;
    };
    mix(config.resolution.h);
    mix(config.resolution.w);
    mix(config.first_conv_width);
    for (const BlockChoice& b : config.blocks) {
        mix(b.width);
        mix(b.depth);
        mix(b.kernel);
        mix(b.expansion);
    }
    mix(config.last_conv_width);
    return h;
}

std::string arch_to_json(const ArchConfig& config) {
    nlohmann::ordered_json j;
    j["resolution"] = {config.resolution.h, config.resolution.w};
    j["first_conv_width"] = config.first_conv_width;
    j["blocks"] = nlohmann::ordered_json::array();
    for (const BlockChoice& b : config.blocks) {
        nlohmann::ordered_json jb;
        jb["width"] = b.width;
        jb["depth"] = b.depth;
        jb["kernel"] = b.kernel;
        jb["expansion"] = b.expansion;
        j["blocks"].push_back(jb);
    }
    j["last_conv_width"] = config.last_conv_width;
    return j.dump(2) + "\n";
}

ArchConfig arch_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const std::exception& e) {
        raise("arch json: parse failure: ", e.what());
    }
    ArchConfig c;
    try {
        c.resolution.h = j.at("resolution").at(0).get<int>();
        c.resolution.w = j.at("resolution").at(1).get<int>();
        c.first_conv_width = j.at("first_conv_width").get<int>();
        for (const auto& jb : j.at("blocks"))
            c.blocks.push_back({jb.at("width").get<int>(), jb.at("depth").get<int>(),
                                jb.at("kernel").get<int>(), jb.at("expansion").get<int>()});
        c.last_conv_width = j.at("last_conv_width").get<int>();
    } catch (const std::exception& e) {
        raise("arch json: missing or malformed field: ", e.what());
    }
    return c;
}

void save_arch(const ArchConfig& config, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    check(out.good(), "arch json: cannot open ", path, " for writing");
    out << arch_to_json(config);
    check(out.good(), "arch json: write to ", path, " failed");
}

ArchConfig load_arch(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check(in.good(), "arch json: cannot open ", path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return arch_from_json(text);
}

}  // namespace sal
