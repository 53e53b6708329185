#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "supersal/cli.hpp"
#include "supersal/io.hpp"

namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() : path(fs::temp_directory_path() / ("supersal_cli_" + std::to_string(::getpid()) +
                                                  "_" + std::to_string(counter++))) {
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static inline int counter = 0;
};

int run(const std::vector<std::string>& args) {
    std::vector<const char*> argv = {"supersal"};
    for (const std::string& a : args) argv.push_back(a.c_str());
    return sal::run_cli(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) { return sal::read_text_file(p.string()); }

size_t line_count(const std::string& text) {
    size_t n = 0;
    for (char c : text) n += c == '\n';
    return n;
}

}  // namespace

TEST_CASE("gen-data writes a loadable dataset and its run config") {
    TempDir dir;
    const std::string out = (dir.path / "ds").string();
    CHECK(run({"gen-data", "--n", "8", "--res", "16x12", "--seed", "5", "--out", out}) == 0);
    CHECK(fs::exists(dir.path / "ds" / "manifest.json"));
    CHECK(fs::exists(dir.path / "ds" / "samples" / "000007.bin"));
    CHECK(fs::exists(dir.path / "ds" / "config.json"));
}

TEST_CASE("export-arch min matches the smallest table row") {
    TempDir dir;
    const std::string out = (dir.path / "min.json").string();
    CHECK(run({"export-arch", "--mode", "min", "--out", out}) == 0);
    const std::string text = slurp(out);
    CHECK(text.find("\"first_conv_width\": 16") != std::string::npos);
    CHECK(text.find("256") != std::string::npos);
    CHECK(text.find("1296") != std::string::npos);

    const std::string out2 = (dir.path / "min2.json").string();
    CHECK(run({"export-arch", "--mode", "min", "--out", out2}) == 0);
    CHECK(slurp(out) == slurp(out2));
}

TEST_CASE("sample writes the requested number of rows") {
    TempDir dir;
    const std::string out = (dir.path / "pop.csv").string();
    CHECK(run({"sample", "--n", "2000", "--seed", "3", "--out", out}) == 0);
    const std::string csv = slurp(out);
    CHECK(line_count(csv) == 2001);  // header + 2000 rows
    CHECK(csv.rfind("flops,params,score\n", 0) == 0);
}

TEST_CASE("train then eval round-trips through checkpoints; reruns are byte-identical") {
    TempDir dir;
    const std::string ds = (dir.path / "ds").string();
    REQUIRE(run({"gen-data", "--n", "24", "--res", "16x12", "--seed", "7", "--out", ds}) == 0);

    auto train_into = [&](const std::string& name) {
        const std::string out = (dir.path / name).string();
        REQUIRE(run({"train", "--data", ds, "--strategy", "self-kd", "--epochs", "3", "--t0",
                     "10", "--alpha", "0.5", "--seed", "11", "--out", out, "--batch-size", "4",
                     "--lr", "0.02"}) == 0);
        return out;
    };
    const std::string run1 = train_into("run1");
    const std::string run2 = train_into("run2");

    for (const char* f : {"log.jsonl", "checkpoint.bin", "teacher.bin", "arch.json"})
        CHECK(slurp(fs::path(run1) / f) == slurp(fs::path(run2) / f));
    CHECK(line_count(slurp(fs::path(run1) / "log.jsonl")) == 3);

    const std::string report = (dir.path / "report.json").string();
    CHECK(run({"eval", "--data", ds, "--arch", run1 + "/arch.json", "--checkpoint",
               run1 + "/checkpoint.bin", "--out", report}) == 0);
    const std::string j = slurp(report);
    CHECK(j.find("\"cc\"") != std::string::npos);
    CHECK(fs::exists(dir.path / "report.csv"));

    // Same command, same bytes.
    const std::string report2 = (dir.path / "report2.json").string();
    CHECK(run({"eval", "--data", ds, "--arch", run1 + "/arch.json", "--checkpoint",
               run1 + "/checkpoint.bin", "--out", report2}) == 0);
    CHECK(slurp(report) == slurp(report2));
}

TEST_CASE("search respects the budget and writes best config plus trace") {
    TempDir dir;
    const std::string ds = (dir.path / "ds").string();
    REQUIRE(run({"gen-data", "--n", "10", "--res", "16x12", "--seed", "9", "--out", ds}) == 0);
    const std::string out = (dir.path / "search").string();
    CHECK(run({"search", "--data", ds, "--space", "desk", "--max-flops", "90000000", "--trials",
               "6", "--seed", "2", "--out", out, "--ft-steps", "2", "--ft-batch", "4"}) == 0);
    CHECK(fs::exists(fs::path(out) / "best.json"));
    const std::string trace = slurp(fs::path(out) / "trace.jsonl");
    CHECK(line_count(trace) >= 1);
    CHECK(trace.find("\"flops\"") != std::string::npos);
}

TEST_CASE("failures exit non-zero with one-line messages") {
    TempDir dir;
    CHECK(run({"eval", "--data", (dir.path / "missing").string(), "--arch", "nope.json",
               "--checkpoint", "nope.bin", "--out", (dir.path / "r.json").string()}) == 1);
    CHECK(run({"gen-data", "--n", "4", "--res", "bogus", "--out", (dir.path / "x").string()}) ==
          1);
    CHECK(run({"no-such-command"}) != 0);
    CHECK(run({"train", "--data", (dir.path / "missing").string(), "--out",
               (dir.path / "y").string(), "--strategy", "warp"}) == 1);
}

TEST_CASE("relative outputs resolve under the output-root environment variable") {
    TempDir dir;
    ::setenv("SUPERSAL_OUTPUT_ROOT", dir.path.c_str(), 1);
    CHECK(run({"export-arch", "--mode", "max", "--out", "sub/arch.json"}) == 0);
    ::unsetenv("SUPERSAL_OUTPUT_ROOT");
    CHECK(fs::exists(dir.path / "sub" / "arch.json"));
}
