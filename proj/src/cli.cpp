#include "supersal/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "supersal/costmodel.hpp"
#include "supersal/data.hpp"
#include "supersal/io.hpp"
#include "supersal/metrics.hpp"
#include "supersal/optimizer.hpp"
#include "supersal/search.hpp"
#include "supersal/trainer.hpp"

namespace fs = std::filesystem;

namespace sal {
namespace {

// Relative output paths resolve under SUPERSAL_OUTPUT_ROOT when it is set.
std::string resolve_out(const std::string& path) {
    const char* root = std::getenv("SUPERSAL_OUTPUT_ROOT");
    if (root && *root && fs::path(path).is_relative()) return (fs::path(root) / path).string();
    return path;
}

Resolution parse_resolution(const std::string& text) {
    const size_t x = text.find('x');
    check(x != std::string::npos && x > 0 && x + 1 < text.size(),
          "resolution must look like HxW, got '", text, "'");
    try {
        return {std::stoi(text.substr(0, x)), std::stoi(text.substr(x + 1))};
    } catch (const std::exception&) {
        raise("resolution must look like HxW, got '", text, "'");
    }
}

SearchSpace space_by_name(const std::string& name) {
    if (name == "table1") return SearchSpace::table1();
    if (name == "desk") return SearchSpace::desk();
    raise("unknown search space '", name, "' (expected table1 or desk)");
}

SampleMode mode_by_name(const std::string& name) {
    if (name == "min") return SampleMode::Min;
    if (name == "max") return SampleMode::Max;
    if (name == "random") return SampleMode::UniformRandom;
    raise("unknown mode '", name, "' (expected min, max, or random)");
}

struct GenDataArgs {
    int64_t n = 64;
    std::string res = "32x24";
    uint64_t seed = 0;
    std::string out;
    int k_min = 1, k_max = 4;
    double sigma = 1.5;
    double train_frac = 0.8;
};

int cmd_gen_data(const GenDataArgs& a) {
    GenOptions opts;
    opts.n = a.n;
    const Resolution r = parse_resolution(a.res);
    opts.h = r.h;
    opts.w = r.w;
    opts.seed = a.seed;
    opts.k_min = a.k_min;
    opts.k_max = a.k_max;
    opts.blur_sigma = a.sigma;
    opts.train_fraction = a.train_frac;
    const std::string out_dir = resolve_out(a.out);
    Dataset data = gen_synthetic(opts);
    save_dataset(data, out_dir);

    nlohmann::ordered_json cfg;
    cfg["command"] = "gen-data";
    cfg["n"] = a.n;
    cfg["res"] = a.res;
    cfg["seed"] = a.seed;
    cfg["k_min"] = a.k_min;
    cfg["k_max"] = a.k_max;
    cfg["sigma"] = a.sigma;
    cfg["train_frac"] = a.train_frac;
    write_text_file((fs::path(out_dir) / "config.json").string(), cfg.dump(2) + "\n");
    std::cout << "wrote " << data.samples.size() << " samples to " << out_dir << "\n";
    return 0;
}

struct TrainArgs {
    std::string data;
    std::string strategy = "baseline";
    int epochs = 20;
    int t0 = 10;
    double alpha = 0.5;
    uint64_t seed = 0;
    std::string out;
    std::string arch;            // optional JSON file
    std::string space = "desk";  // store space
    int batch_size = 16;
    double lr = 0.1;
    double lr_min = 0.0;
    double momentum = 0.9;
};

int cmd_train(const TrainArgs& a) {
    const Dataset data = load_dataset(a.data);
    const SearchSpace space = space_by_name(a.space);
    const Resolution data_res{data.manifest.h, data.manifest.w};

    TrainOptions opts;
    opts.strategy = strategy_from_name(a.strategy);
    opts.sched.epochs = a.epochs;
    opts.sched.t0 = a.t0;
    opts.sched.alpha = a.alpha;
    opts.sched.batch_size = a.batch_size;
    opts.sched.lr_max = a.lr;
    opts.sched.lr_min = a.lr_min;
    opts.sched.momentum = a.momentum;
    opts.seed = a.seed;

    ArchConfig arch;
    if (!a.arch.empty()) {
        arch = load_arch(a.arch);
        check(arch.resolution == data_res, "train: arch resolution ", arch.resolution.h, "x",
              arch.resolution.w, " does not match dataset resolution ", data_res.h, "x",
              data_res.w);
    } else {
        Rng rng = Rng(a.seed).fork("arch");
        arch = sample_subnet(space, SampleMode::Min, rng);
        arch.resolution = data_res;
    }

    const std::string out_dir = resolve_out(a.out);
    fs::create_directories(out_dir);
    opts.log_path = (fs::path(out_dir) / "log.jsonl").string();

    ParameterStore<float> store(space);
    store.init_params(Rng(a.seed).fork("init"));
    const TrainResult result = train(store, data, arch, opts);

    save_checkpoint(store, (fs::path(out_dir) / "checkpoint.bin").string());
    if (result.teacher)
        save_checkpoint(*result.teacher, (fs::path(out_dir) / "teacher.bin").string());
    save_arch(arch, (fs::path(out_dir) / "arch.json").string());

    nlohmann::ordered_json cfg;
    cfg["command"] = "train";
    cfg["data"] = a.data;
    cfg["strategy"] = a.strategy;
    cfg["epochs"] = a.epochs;
    cfg["t0"] = a.t0;
    cfg["alpha"] = a.alpha;
    cfg["seed"] = a.seed;
    cfg["space"] = a.space;
    cfg["arch"] = a.arch;
    cfg["batch_size"] = a.batch_size;
    cfg["lr"] = a.lr;
    cfg["lr_min"] = a.lr_min;
    cfg["momentum"] = a.momentum;
    write_text_file((fs::path(out_dir) / "config.json").string(), cfg.dump(2) + "\n");

    std::cout << "trained " << a.strategy << " for " << a.epochs << " epochs, final val loss "
              << format_double(result.log.back().val_loss) << "\n";
    return 0;
}

struct EvalArgs {
    std::string data, arch, checkpoint, out;
    std::string split = "val";
};

int cmd_eval(const EvalArgs& a) {
    const Dataset data = load_dataset(a.data);
    const ArchConfig arch = load_arch(a.arch);
    const Resolution data_res{data.manifest.h, data.manifest.w};
    check(arch.resolution == data_res, "eval: arch resolution ", arch.resolution.h, "x",
          arch.resolution.w, " does not match dataset resolution ", data_res.h, "x", data_res.w);

    ParameterStore<float> store(space_by_name(checkpoint_space_name(a.checkpoint)));
    load_checkpoint(store, a.checkpoint);
    ExecutableNet<float> net = build_network(arch, store);

    std::vector<size_t> indices;
    if (a.split == "train")
        indices = data.train_indices();
    else if (a.split == "val")
        indices = data.val_indices();
    else if (a.split == "all")
        for (size_t i = 0; i < data.samples.size(); ++i) indices.push_back(i);
    else
        raise("eval: unknown split '", a.split, "' (expected train, val, or all)");
    check(!indices.empty(), "eval: split '", a.split, "' is empty");

    std::vector<MetricReport> reports;
    for (size_t idx : indices) {
        Batch batch = make_batch(data, {idx}, 0, 1);
        TensorF P = net.forward_saliency(batch.images, BnMode::Eval);
        reports.push_back(eval_all(P, batch.density, batch.fixations));
    }
    const MetricReport agg = aggregate_reports(reports);

    const std::string out_path = resolve_out(a.out);
    if (fs::path(out_path).has_parent_path()) fs::create_directories(fs::path(out_path).parent_path());
    write_text_file(out_path, report_to_json(agg));
    std::string csv_path = out_path;
    if (csv_path.size() > 5 && csv_path.substr(csv_path.size() - 5) == ".json")
        csv_path = csv_path.substr(0, csv_path.size() - 5);
    csv_path += ".csv";
    write_text_file(csv_path, reports_to_csv(reports));
    std::cout << "cc " << format_double(agg.cc) << ", kld " << format_double(agg.kld) << ", nss "
              << format_double(agg.nss) << ", sim " << format_double(agg.sim) << ", auc "
              << format_double(agg.auc) << " over " << reports.size() << " images\n";
    return 0;
}

struct SearchArgs {
    std::string data;
    int64_t max_flops = 0;
    int64_t max_params = 0;
    int64_t trials = 64;
    uint64_t seed = 0;
    std::string out;
    std::string space = "table1";
    std::string algo = "random";
    int ft_steps = 8;
    int ft_batch = 8;
    double ft_lr = 0.05;
};

int cmd_search(const SearchArgs& a) {
    const Dataset data = load_dataset(a.data);
    const SearchSpace space = space_by_name(a.space);
    const Resolution data_res{data.manifest.h, data.manifest.w};
    const std::vector<size_t> train_idx = data.train_indices();
    const std::vector<size_t> val_idx = data.val_indices();
    check(!train_idx.empty() && !val_idx.empty(), "search: dataset needs both splits");

    SearchBudget budget;
    if (a.max_flops > 0) budget.max_flops = a.max_flops;
    if (a.max_params > 0) budget.max_params = a.max_params;

    // Score = validation CC after a brief fine-tune of the candidate from a
    // shared random init, so a search run finishes in minutes.
    ParameterStore<float> store(space);
    store.init_params(Rng(a.seed).fork("init"));
    const std::vector<float> init_params = store.param_data();
    const std::vector<float> init_buffers = store.buffer_data();

    const LossConfig loss_cfg;
    Evaluator evaluate = [&](const ArchConfig& candidate) {
        store.param_data() = init_params;
        store.buffer_data() = init_buffers;
        ArchConfig c = candidate;
        c.resolution = data_res;
        ExecutableNet<float> net = build_network(c, store);
        SgdMomentum<float> opt(store.param_data().size());
        size_t at = 0;
        for (int s = 0; s < a.ft_steps; ++s) {
            const size_t count =
                std::min<size_t>(static_cast<size_t>(a.ft_batch), train_idx.size() - at);
            Batch batch = make_batch(data, train_idx, at, count);
            at = (at + count) % std::max<size_t>(1, train_idx.size() - 1);
            Tape<float> tape;
            TapeScope<float> scope(tape);
            TensorF P = net.forward_saliency(batch.images, BnMode::Train);
            TensorF l = combined_loss(P.narrow(0, 0, 1), batch.density.narrow(0, 0, 1),
                                      batch.fixations.narrow(0, 0, 1), loss_cfg);
            for (int64_t b = 1; b < P.dim(0); ++b)
                l = add(l, combined_loss(P.narrow(0, b, 1), batch.density.narrow(0, b, 1),
                                         batch.fixations.narrow(0, b, 1), loss_cfg));
            l = mul_scalar(l, 1.0 / static_cast<double>(P.dim(0)));
            store.zero_grad();
            tape.backward(l);
            opt.step(store.param_data(), store.grad_data(), a.ft_lr, 0.9);
        }
        double cc_sum = 0.0;
        for (size_t idx : val_idx) {
            Batch batch = make_batch(data, {idx}, 0, 1);
            TensorF P = net.forward_saliency(batch.images, BnMode::Eval);
            cc_sum += eval_cc(P, batch.density);
        }
        return cc_sum / static_cast<double>(val_idx.size());
    };

    const SearchAlgo algo = a.algo == "evolution" ? SearchAlgo::Evolutionary : SearchAlgo::Random;
    if (a.algo != "random" && a.algo != "evolution")
        raise("search: unknown algorithm '", a.algo, "' (expected random or evolution)");
    const SearchResult result =
        constrained_search(space, budget, evaluate, a.trials, a.seed, algo);

    const std::string out_dir = resolve_out(a.out);
    fs::create_directories(out_dir);
    save_arch(result.best, (fs::path(out_dir) / "best.json").string());
    write_text_file((fs::path(out_dir) / "trace.jsonl").string(),
                    search_trace_to_jsonl(result.trace));
    nlohmann::ordered_json cfg;
    cfg["command"] = "search";
    cfg["data"] = a.data;
    cfg["max_flops"] = a.max_flops;
    cfg["max_params"] = a.max_params;
    cfg["trials"] = a.trials;
    cfg["seed"] = a.seed;
    cfg["space"] = a.space;
    cfg["algo"] = a.algo;
    cfg["ft_steps"] = a.ft_steps;
    cfg["ft_batch"] = a.ft_batch;
    cfg["ft_lr"] = a.ft_lr;
    write_text_file((fs::path(out_dir) / "config.json").string(), cfg.dump(2) + "\n");
    std::cout << "best score " << format_double(result.best_score) << " over "
              << result.trace.size() << " evaluated candidates\n";
    return 0;
}

struct SampleArgs {
    int64_t n = 2000;
    uint64_t seed = 0;
    std::string out;
    std::string space = "table1";
};

int cmd_sample(const SampleArgs& a) {
    const SearchSpace space = space_by_name(a.space);
    const auto rows = sample_population(space, a.n, a.seed);
    const std::string out_path = resolve_out(a.out);
    if (fs::path(out_path).has_parent_path()) fs::create_directories(fs::path(out_path).parent_path());
    write_text_file(out_path, population_to_csv(rows));
    std::cout << "wrote " << rows.size() << " subnet costs to " << out_path << "\n";
    return 0;
}

struct ExportArchArgs {
    std::string mode = "min";
    uint64_t seed = 0;
    std::string out;
    std::string space = "table1";
};

int cmd_export_arch(const ExportArchArgs& a) {
    const SearchSpace space = space_by_name(a.space);
    Rng rng = Rng(a.seed).fork("export-arch");
    const ArchConfig arch = sample_subnet(space, mode_by_name(a.mode), rng);
    const std::string out_path = resolve_out(a.out);
    if (fs::path(out_path).has_parent_path()) fs::create_directories(fs::path(out_path).parent_path());
    save_arch(arch, out_path);
    std::cout << "wrote " << a.mode << " config to " << out_path << "\n";
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"weight-sharing saliency supernet: training, evaluation, cost modeling, search"};
    app.require_subcommand(1);

    GenDataArgs gen;
    CLI::App* c_gen = app.add_subcommand("gen-data", "generate a synthetic saliency dataset");
    c_gen->add_option("--n", gen.n, "sample count")->check(CLI::PositiveNumber);
    c_gen->add_option("--res", gen.res, "resolution HxW");
    c_gen->add_option("--seed", gen.seed, "rng seed");
    c_gen->add_option("--out", gen.out, "output directory")->required();
    c_gen->add_option("--k-min", gen.k_min, "min fixations per image");
    c_gen->add_option("--k-max", gen.k_max, "max fixations per image");
    c_gen->add_option("--sigma", gen.sigma, "density blur sigma");
    c_gen->add_option("--train-frac", gen.train_frac, "training split fraction");

    TrainArgs tr;
    CLI::App* c_train = app.add_subcommand("train", "train with one of the four strategies");
    c_train->add_option("--data", tr.data, "dataset directory")->required();
    c_train->add_option("--strategy", tr.strategy, "baseline|self-kd|sandwich|inplace");
    c_train->add_option("--epochs", tr.epochs, "epochs");
    c_train->add_option("--t0", tr.t0, "cosine restart period");
    c_train->add_option("--alpha", tr.alpha, "Self-KD blend weight");
    c_train->add_option("--seed", tr.seed, "rng seed");
    c_train->add_option("--out", tr.out, "output directory")->required();
    c_train->add_option("--arch", tr.arch, "arch JSON (default: smallest config in the space)");
    c_train->add_option("--space", tr.space, "table1|desk");
    c_train->add_option("--batch-size", tr.batch_size, "batch size");
    c_train->add_option("--lr", tr.lr, "peak learning rate");
    c_train->add_option("--lr-min", tr.lr_min, "annealed learning-rate floor");
    c_train->add_option("--momentum", tr.momentum, "SGD momentum");

    EvalArgs ev;
    CLI::App* c_eval = app.add_subcommand("eval", "score a checkpoint with the five metrics");
    c_eval->add_option("--data", ev.data, "dataset directory")->required();
    c_eval->add_option("--arch", ev.arch, "arch JSON")->required();
    c_eval->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->required();
    c_eval->add_option("--out", ev.out, "report JSON path")->required();
    c_eval->add_option("--split", ev.split, "train|val|all");

    SearchArgs se;
    CLI::App* c_search = app.add_subcommand("search", "constrained architecture search");
    c_search->add_option("--data", se.data, "dataset directory")->required();
    c_search->add_option("--max-flops", se.max_flops, "FLOPS budget (full net, config resolution)");
    c_search->add_option("--max-params", se.max_params, "parameter budget");
    c_search->add_option("--trials", se.trials, "candidate count")->check(CLI::PositiveNumber);
    c_search->add_option("--seed", se.seed, "rng seed");
    c_search->add_option("--out", se.out, "output directory")->required();
    c_search->add_option("--space", se.space, "table1|desk");
    c_search->add_option("--algo", se.algo, "random|evolution");
    c_search->add_option("--ft-steps", se.ft_steps, "fine-tune steps per candidate");
    c_search->add_option("--ft-batch", se.ft_batch, "fine-tune batch size");
    c_search->add_option("--ft-lr", se.ft_lr, "fine-tune learning rate");

    SampleArgs sa;
    CLI::App* c_sample = app.add_subcommand("sample", "sample a subnet population with costs");
    c_sample->add_option("--n", sa.n, "population size")->check(CLI::PositiveNumber);
    c_sample->add_option("--seed", sa.seed, "rng seed");
    c_sample->add_option("--out", sa.out, "CSV path")->required();
    c_sample->add_option("--space", sa.space, "table1|desk");

    ExportArchArgs ex;
    CLI::App* c_export = app.add_subcommand("export-arch", "write an arch config JSON");
    c_export->add_option("--mode", ex.mode, "min|max|random");
    c_export->add_option("--seed", ex.seed, "rng seed");
    c_export->add_option("--out", ex.out, "output JSON path")->required();
    c_export->add_option("--space", ex.space, "table1|desk");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (c_gen->parsed()) return cmd_gen_data(gen);
        if (c_train->parsed()) return cmd_train(tr);
        if (c_eval->parsed()) return cmd_eval(ev);
        if (c_search->parsed()) return cmd_search(se);
        if (c_sample->parsed()) return cmd_sample(sa);
        if (c_export->parsed()) return cmd_export_arch(ex);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace sal
