#include "supersal/search.hpp"

#include <algorithm>

#include "json.hpp"
#include "supersal/metrics.hpp"

namespace sal {
namespace {

CostReport config_cost(const ArchConfig& c) {
    return cost_report(c, c.resolution, CostScope::Full);
}

bool within(const SearchBudget& budget, const CostReport& cost) {
    if (budget.max_flops && cost.flops > *budget.max_flops) return false;
    if (budget.max_params && cost.params > *budget.max_params) return false;
    return true;
}

// Mutates exactly one elastic dimension to a different choice; dimensions
// with a single choice are not candidates.
ArchConfig mutate_one(const SearchSpace& space, const ArchConfig& parent, Rng& rng) {
    struct Dim {
        int block;  // -1 resolution, -2 first, -3 last, else block index
        int field;  // 0 width, 1 depth, 2 kernel, 3 expansion
        size_t n_choices;
    };
    std::vector<Dim> dims;
    if (space.resolutions.size() > 1) dims.push_back({-1, 0, space.resolutions.size()});
    if (space.first_conv_widths.size() > 1) dims.push_back({-2, 0, space.first_conv_widths.size()});
    if (space.last_conv_widths.size() > 1) dims.push_back({-3, 0, space.last_conv_widths.size()});
    for (int b = 0; b < static_cast<int>(space.blocks.size()); ++b) {
        const BlockSpace& bs = space.blocks[static_cast<size_t>(b)];
        if (bs.widths.size() > 1) dims.push_back({b, 0, bs.widths.size()});
        if (bs.depths.size() > 1) dims.push_back({b, 1, bs.depths.size()});
        if (bs.kernels.size() > 1) dims.push_back({b, 2, bs.kernels.size()});
        if (bs.expansions.size() > 1) dims.push_back({b, 3, bs.expansions.size()});
    }
    if (dims.empty()) return parent;

    const Dim d = dims[rng.next_below(dims.size())];
    auto pick_other = [&rng](const std::vector<int>& choices, int current) {
        int v = current;
        while (v == current) v = choices[rng.next_below(choices.size())];
        return v;
    };
    ArchConfig child = parent;
    if (d.block == -1) {
        Resolution r = parent.resolution;
        while (r == parent.resolution)
            r = space.resolutions[rng.next_below(space.resolutions.size())];
        child.resolution = r;
    } else if (d.block == -2) {
        child.first_conv_width = pick_other(space.first_conv_widths, parent.first_conv_width);
    } else if (d.block == -3) {
        child.last_conv_width = pick_other(space.last_conv_widths, parent.last_conv_width);
    } else {
        const BlockSpace& bs = space.blocks[static_cast<size_t>(d.block)];
        BlockChoice& c = child.blocks[static_cast<size_t>(d.block)];
        switch (d.field) {
            case 0: c.width = pick_other(bs.widths, c.width); break;
            case 1: c.depth = pick_other(bs.depths, c.depth); break;
            case 2: c.kernel = pick_other(bs.kernels, c.kernel); break;
            default: c.expansion = pick_other(bs.expansions, c.expansion); break;
        }
    }
    return child;
}

}  // namespace

std::vector<PopulationRow> sample_population(const SearchSpace& space, int64_t n, uint64_t seed,
                                             bool include_minmax) {
    check(n >= 1, "sample_population: n must be >= 1, got ", n);
    Rng rng = Rng(seed).fork("population");
    std::vector<PopulationRow> rows;
    rows.reserve(static_cast<size_t>(n));
    if (include_minmax) {
        Rng unused = rng.fork("minmax");
        rows.push_back({sample_subnet(space, SampleMode::Min, unused), {}, std::nullopt});
        if (n >= 2) rows.push_back({sample_subnet(space, SampleMode::Max, unused), {}, std::nullopt});
    }
    while (static_cast<int64_t>(rows.size()) < n)
        rows.push_back({sample_subnet(space, SampleMode::UniformRandom, rng), {}, std::nullopt});
    for (PopulationRow& r : rows) r.cost = config_cost(r.config);
    return rows;
}

std::string population_to_csv(const std::vector<PopulationRow>& rows) {
    std::string out = "flops,params,score\n";
    for (const PopulationRow& r : rows) {
        out += std::to_string(r.cost.flops) + "," + std::to_string(r.cost.params) + ",";
        if (r.score) out += format_double(*r.score);
        out += "\n";
    }
    return out;
}

SearchResult constrained_search(const SearchSpace& space, const SearchBudget& budget,
                                const Evaluator& evaluate, int64_t n_trials, uint64_t seed,
                                SearchAlgo algo) {
    check(n_trials >= 1, "constrained_search: n_trials must be >= 1, got ", n_trials);
    check(budget.max_flops || budget.max_params, "constrained_search: no budget given");
    Rng rng = Rng(seed).fork("search");

    ArchConfig min_cfg = sample_subnet(space, SampleMode::Min, rng);
    const CostReport min_cost = config_cost(min_cfg);
    if (budget.max_flops)
        check(min_cost.flops <= *budget.max_flops, "constrained_search: FLOPS budget ",
              *budget.max_flops, " is below the smallest config's ", min_cost.flops);
    if (budget.max_params)
        check(min_cost.params <= *budget.max_params, "constrained_search: parameter budget ",
              *budget.max_params, " is below the smallest config's ", min_cost.params);

    SearchResult result;
    int64_t submitted = 0;
    bool have_best = false;
    auto consider = [&](const ArchConfig& c) -> bool {
        const CostReport cost = config_cost(c);
        if (!within(budget, cost)) return false;
        SearchTraceEntry e;
        e.index = submitted++;
        e.config = c;
        e.cost = cost;
        e.score = evaluate(c);
        if (!have_best || e.score > result.best_score) {
            have_best = true;
            result.best = c;
            result.best_score = e.score;
        }
        result.trace.push_back(std::move(e));
        return true;
    };

    if (algo == SearchAlgo::Random) {
        consider(min_cfg);
        if (n_trials >= 2) consider(sample_subnet(space, SampleMode::Max, rng));
        for (int64_t i = 2; i < n_trials; ++i)
            consider(sample_subnet(space, SampleMode::UniformRandom, rng));
    } else {
        constexpr size_t kPopulation = 32;
        constexpr size_t kTournament = 4;
        std::vector<std::pair<ArchConfig, double>> population;
        auto consider_into_pop = [&](const ArchConfig& c) {
            const size_t before = result.trace.size();
            if (!consider(c)) return;
            population.emplace_back(c, result.trace[before].score);
        };
        consider_into_pop(min_cfg);
        if (n_trials >= 2) consider_into_pop(sample_subnet(space, SampleMode::Max, rng));
        int64_t attempts = 0;
        while (population.size() < kPopulation &&
               static_cast<int64_t>(result.trace.size()) < n_trials && attempts < 16 * n_trials) {
            consider_into_pop(sample_subnet(space, SampleMode::UniformRandom, rng));
            ++attempts;
        }
        while (static_cast<int64_t>(result.trace.size()) < n_trials && !population.empty() &&
               attempts < 64 * n_trials) {
            ++attempts;
            size_t parent = rng.next_below(population.size());
            for (size_t t = 1; t < kTournament; ++t) {
                const size_t rival = rng.next_below(population.size());
                if (population[rival].second > population[parent].second) parent = rival;
            }
            const ArchConfig child = mutate_one(space, population[parent].first, rng);
            const size_t before = result.trace.size();
            if (!consider(child)) continue;
            population.emplace_back(child, result.trace[before].score);
            if (population.size() > kPopulation) {
                auto worst = std::min_element(
                    population.begin(), population.end(),
                    [](const auto& a, const auto& b) { return a.second < b.second; });
                population.erase(worst);
            }
        }
    }
    check(have_best, "constrained_search: no candidate fit the budget");
    return result;
}

std::string search_trace_to_jsonl(const std::vector<SearchTraceEntry>& trace) {
    std::string out;
    for (const SearchTraceEntry& e : trace) {
        nlohmann::ordered_json j;
        j["index"] = e.index;
        j["flops"] = e.cost.flops;
        j["params"] = e.cost.params;
        j["score"] = e.score;
        j["config"] = nlohmann::ordered_json::parse(arch_to_json(e.config));
        out += j.dump() + "\n";
    }
    return out;
}

}  // namespace sal
