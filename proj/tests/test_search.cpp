#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <set>

#include "doctest.h"
#include "supersal/search.hpp"
#include "support/oracles.hpp"

using namespace sal;

namespace {

std::pair<int64_t, int64_t> cost_envelope(const SearchSpace& space) {
    Rng rng(0);
    ArchConfig mn = sample_subnet(space, SampleMode::Min, rng);
    ArchConfig mx = sample_subnet(space, SampleMode::Max, rng);
    return {count_flops(mn, mn.resolution, CostScope::Full),
            count_flops(mx, mx.resolution, CostScope::Full)};
}

}  // namespace

TEST_CASE("population rows stay inside the min/max cost envelope") {
    const SearchSpace space = SearchSpace::table1();
    Rng rng(0);
    ArchConfig mn = sample_subnet(space, SampleMode::Min, rng);
    ArchConfig mx = sample_subnet(space, SampleMode::Max, rng);
    const int64_t pmin = count_params(mn, CostScope::Full);
    const int64_t pmax = count_params(mx, CostScope::Full);
    const auto [fmin, fmax] = cost_envelope(space);

    const auto rows = sample_population(space, 2000, 11);
    REQUIRE(rows.size() == 2000);
    for (const PopulationRow& r : rows) {
        CHECK(r.cost.params >= pmin);
        CHECK(r.cost.params <= pmax);
        CHECK(r.cost.flops >= fmin);
        CHECK(r.cost.flops <= fmax);
    }
}

TEST_CASE("forcing min/max rows pins the envelope ends") {
    const SearchSpace space = SearchSpace::table1();
    const auto rows = sample_population(space, 1, 5, /*include_minmax=*/true);
    REQUIRE(rows.size() == 1);
    Rng rng(0);
    ArchConfig mn = sample_subnet(space, SampleMode::Min, rng);
    CHECK(rows[0].config == mn);
    CHECK(rows[0].cost.flops == count_flops(mn, mn.resolution, CostScope::Full));
}

TEST_CASE("population sampling is duplicate-free at the expected rate and deterministic") {
    const SearchSpace space = SearchSpace::table1();
    const auto a = sample_population(space, 2000, 7);
    const auto b = sample_population(space, 2000, 7);
    std::set<uint64_t> seen;
    int dups = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].config == b[i].config);
        if (!seen.insert(config_hash(a[i].config)).second) ++dups;
    }
    CHECK(dups <= 1);
}

TEST_CASE("population CSV has the fixed header and empty score fields") {
    const SearchSpace space = SearchSpace::desk();
    auto rows = sample_population(space, 3, 2);
    rows[1].score = 0.5;
    const std::string csv = population_to_csv(rows);
    CHECK(csv.substr(0, 19) == "flops,params,score\n");
    // Row without score ends with a bare comma.
    const size_t line1 = csv.find('\n') + 1;
    const size_t line2 = csv.find('\n', line1) + 1;
    CHECK(csv[line2 - 2] == ',');
    CHECK(csv.find("0.5") != std::string::npos);
}

TEST_CASE("an unconstrained search maximizing flops returns the max config") {
    const SearchSpace space = SearchSpace::table1();
    SearchBudget budget;
    budget.max_flops = int64_t{1} << 62;
    Evaluator by_flops = [](const ArchConfig& c) {
        return static_cast<double>(count_flops(c, c.resolution, CostScope::Full));
    };
    const SearchResult r = constrained_search(space, budget, by_flops, 50, 3);
    Rng rng(0);
    CHECK(r.best == sample_subnet(space, SampleMode::Max, rng));
}

TEST_CASE("a budget below the smallest config is rejected") {
    const SearchSpace space = SearchSpace::table1();
    SearchBudget budget;
    budget.max_flops = 1000;
    Evaluator zero = [](const ArchConfig&) { return 0.0; };
    CHECK_THROWS_WITH_AS(constrained_search(space, budget, zero, 10, 1),
                         doctest::Contains("below the smallest config"), Error);
}

TEST_CASE("every scored candidate respects the budget across random budgets") {
    const SearchSpace space = SearchSpace::table1();
    const auto [fmin, fmax] = cost_envelope(space);
    Rng rng(9);
    Evaluator noise = [&](const ArchConfig& c) {
        return static_cast<double>(config_hash(c) % 1000);
    };
    for (int trial = 0; trial < 100; ++trial) {
        SearchBudget budget;
        budget.max_flops = fmin + static_cast<int64_t>(rng.next_double() * (fmax - fmin));
        const SearchResult r = constrained_search(space, budget, noise, 20, trial);
        CHECK(!r.trace.empty());
        for (const SearchTraceEntry& e : r.trace) CHECK(e.cost.flops <= *budget.max_flops);
        CHECK(count_flops(r.best, r.best.resolution, CostScope::Full) <= *budget.max_flops);
    }
}

TEST_CASE("ties resolve to the lowest submission index") {
    const SearchSpace space = SearchSpace::desk();
    SearchBudget budget;
    budget.max_flops = int64_t{1} << 62;
    Evaluator constant = [](const ArchConfig&) { return 1.0; };
    const SearchResult r = constrained_search(space, budget, constant, 30, 4);
    REQUIRE(!r.trace.empty());
    CHECK(r.best == r.trace.front().config);
}

TEST_CASE("evolutionary search obeys the budget and improves or matches random") {
    const SearchSpace space = SearchSpace::table1();
    const auto [fmin, fmax] = cost_envelope(space);
    SearchBudget budget;
    budget.max_flops = (fmin + fmax) / 2;
    // Score favors flops close to (but under) the budget.
    Evaluator score = [&](const ArchConfig& c) {
        return -std::abs(static_cast<double>(count_flops(c, c.resolution, CostScope::Full)) -
                         static_cast<double>(*budget.max_flops) * 0.9);
    };
    const SearchResult evo =
        constrained_search(space, budget, score, 120, 5, SearchAlgo::Evolutionary);
    for (const SearchTraceEntry& e : evo.trace) CHECK(e.cost.flops <= *budget.max_flops);
    const SearchResult rnd = constrained_search(space, budget, score, 120, 5, SearchAlgo::Random);
    CHECK(evo.best_score >= rnd.best_score - 1e-9);
}

TEST_CASE("search trace serializes one JSON record per candidate") {
    const SearchSpace space = SearchSpace::desk();
    SearchBudget budget;
    budget.max_flops = int64_t{1} << 62;
    Evaluator by_params = [](const ArchConfig& c) {
        return static_cast<double>(count_params(c, CostScope::Full));
    };
    const SearchResult r = constrained_search(space, budget, by_params, 8, 6);
    const std::string text = search_trace_to_jsonl(r.trace);
    size_t lines = 0;
    for (char ch : text) lines += ch == '\n';
    CHECK(lines == r.trace.size());
    CHECK(text.find("\"index\":0") != std::string::npos);
}
