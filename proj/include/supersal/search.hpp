#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "supersal/costmodel.hpp"
#include "supersal/search_space.hpp"

namespace sal {

struct PopulationRow {
    ArchConfig config;
    CostReport cost;  // full scope, at the config's own resolution
    std::optional<double> score;
};

// n uniform-random subnets with their costs; with include_minmax the first
// two rows are the smallest and largest configs (handy for pinning the cost
// envelope). Deterministic per seed.
std::vector<PopulationRow> sample_population(const SearchSpace& space, int64_t n, uint64_t seed,
                                             bool include_minmax = false);

// Header flops,params,score; the score field is empty when unset.
std::string population_to_csv(const std::vector<PopulationRow>& rows);

struct SearchBudget {
    std::optional<int64_t> max_flops;
    std::optional<int64_t> max_params;
};

struct SearchTraceEntry {
    int64_t index = 0;  // submission order
    ArchConfig config;
    CostReport cost;
    double score = 0.0;
};

struct SearchResult {
    ArchConfig best;
    double best_score = 0.0;
    std::vector<SearchTraceEntry> trace;  // only in-budget, scored candidates
};

using Evaluator = std::function<double(const ArchConfig&)>;

enum class SearchAlgo { Random, Evolutionary };

// Maximizes `evaluate` subject to the budget. Random search draws n_trials
// candidates with the min and max configs always included; candidates over
// budget are discarded unevaluated, so the trace never contains an
// over-budget entry. Ties resolve to the lowest submission index. The
// evolutionary variant keeps a population of 32, picks parents by
// 4-tournament, and mutates one dimension per step. Errors if the budget
// does not admit even the smallest config.
SearchResult constrained_search(const SearchSpace& space, const SearchBudget& budget,
                                const Evaluator& evaluate, int64_t n_trials, uint64_t seed,
                                SearchAlgo algo = SearchAlgo::Random);

std::string search_trace_to_jsonl(const std::vector<SearchTraceEntry>& trace);

}  // namespace sal
