#include "supersal/trainer.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"
#include "supersal/autograd.hpp"
#include "supersal/optimizer.hpp"
#include "supersal/rng.hpp"

namespace sal {

std::string strategy_name(Strategy s) {
    switch (s) {
        case Strategy::Baseline: return "baseline";
        case Strategy::SelfKd: return "self-kd";
        case Strategy::Sandwich: return "sandwich";
        default: return "inplace";
    }
}

Strategy strategy_from_name(const std::string& name) {
    if (name == "baseline") return Strategy::Baseline;
    if (name == "self-kd") return Strategy::SelfKd;
    if (name == "sandwich") return Strategy::Sandwich;
    if (name == "inplace") return Strategy::InplaceDistill;
    raise("unknown strategy '", name, "' (expected baseline, self-kd, sandwich, or inplace)");
}

TensorF blend_target(const TensorF& gt, const TensorF& p_avg, double alpha) {
    check(gt.shape() == p_avg.shape(), "blend_target: shape mismatch ", shape_str(gt.shape()),
          " vs ", shape_str(p_avg.shape()));
    check(alpha >= 0.0 && alpha <= 1.0, "blend_target: alpha ", alpha, " outside [0, 1]");
    const auto g = gt.to_vector();
    const auto p = p_avg.to_vector();
    std::vector<float> out(g.size());
    for (size_t i = 0; i < g.size(); ++i)
        out[i] = p[i] + (g[i] - p[i]) * static_cast<float>(alpha);
    TensorF t = TensorF::from_data(gt.shape(), std::move(out));

    // Renormalize to a distribution; per image when batched.
    if (t.rank() == 4) {
        const int64_t B = t.dim(0), per = t.numel() / B;
        float* d = t.data();
        for (int64_t b = 0; b < B; ++b) {
            double s = 0.0;
            for (int64_t i = 0; i < per; ++i) s += d[b * per + i];
            check(s > 0.0, "blend_target: image ", b, " sums to ", s);
            for (int64_t i = 0; i < per; ++i)
                d[b * per + i] = static_cast<float>(d[b * per + i] / s);
        }
    } else {
        double s = 0.0;
        float* d = t.data();
        for (int64_t i = 0; i < t.numel(); ++i) s += d[i];
        check(s > 0.0, "blend_target: map sums to ", s);
        for (int64_t i = 0; i < t.numel(); ++i) d[i] = static_cast<float>(d[i] / s);
    }
    return t;
}

void update_teacher(TrainState& state, const ParameterStore<float>& student, bool pairwise) {
    check(state.teacher != nullptr, "update_teacher: teacher store not initialized");
    auto& t = state.teacher->param_data();
    const auto& s = student.param_data();
    check(t.size() == s.size(), "update_teacher: layout mismatch");
    if (state.accepted_count == 0) {
        for (size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(s[i]);
        auto& tb = state.teacher->buffer_data();
        const auto& sb = student.buffer_data();
        for (size_t i = 0; i < tb.size(); ++i) tb[i] = static_cast<double>(sb[i]);
        state.teacher->bn_counts() = student.bn_counts();
    } else if (pairwise) {
        for (size_t i = 0; i < t.size(); ++i) t[i] = (t[i] + static_cast<double>(s[i])) / 2.0;
    } else {
        const double n = static_cast<double>(state.accepted_count);
        for (size_t i = 0; i < t.size(); ++i)
            t[i] = (t[i] * n + static_cast<double>(s[i])) / (n + 1.0);
    }
    ++state.accepted_count;
}

namespace {

// Mean combined loss over the images of a batch, built on the active tape.
TensorF batch_mean_loss(const TensorF& P, const TensorF& G, const TensorF& F,
                        const LossConfig& cfg) {
    const int64_t B = P.dim(0);
    TensorF total;
    for (int64_t b = 0; b < B; ++b) {
        TensorF lb = combined_loss(P.narrow(0, b, 1), G.narrow(0, b, 1), F.narrow(0, b, 1), cfg);
        total = (b == 0) ? lb : add(total, lb);
    }
    return mul_scalar(total, 1.0 / static_cast<double>(B));
}

std::vector<std::pair<size_t, size_t>> batch_windows(size_t n, size_t batch_size) {
    // A trailing batch of one would starve batch norm at 1x1 feature maps;
    // fold it into the previous batch instead.
    std::vector<std::pair<size_t, size_t>> out;
    size_t at = 0;
    while (at < n) {
        size_t count = std::min(batch_size, n - at);
        if (n - at - count == 1) ++count;
        out.emplace_back(at, count);
        at += count;
    }
    return out;
}

ArchConfig with_resolution(ArchConfig c, Resolution r) {
    c.resolution = r;
    return c;
}

void recalibrate_teacher_bn(ParameterStore<double>& teacher, const Dataset& data,
                            const ArchConfig& arch, const std::vector<size_t>& train_idx,
                            int batch_size) {
    teacher.reset_bn_stats();
    ExecutableNet<double> net = build_network(arch, teacher);
    for (const auto& [begin, count] : batch_windows(train_idx.size(), static_cast<size_t>(batch_size))) {
        Batch batch = make_batch(data, train_idx, begin, count);
        net.forward_saliency(batch.images.cast<double>(), BnMode::Accumulate);
    }
}

}  // namespace

double validation_loss(const ParameterStore<float>& store, const Dataset& data,
                       const ArchConfig& config, const std::vector<size_t>& indices,
                       const LossConfig& cfg, int batch_size) {
    check(!indices.empty(), "validation_loss: empty index list");
    ExecutableNet<float> net = build_network(config, store);
    double total = 0.0;
    int64_t images = 0;
    for (const auto& [begin, count] : batch_windows(indices.size(), static_cast<size_t>(batch_size))) {
        Batch batch = make_batch(data, indices, begin, count);
        TensorF P = net.forward_saliency(batch.images, BnMode::Eval);
        for (size_t b = 0; b < count; ++b) {
            TensorF lb = combined_loss(P.narrow(0, static_cast<int64_t>(b), 1),
                                       batch.density.narrow(0, static_cast<int64_t>(b), 1),
                                       batch.fixations.narrow(0, static_cast<int64_t>(b), 1), cfg);
            total += static_cast<double>(lb.data()[0]);
            ++images;
        }
    }
    return total / static_cast<double>(images);
}

TrainResult train(ParameterStore<float>& store, const Dataset& data, const ArchConfig& arch,
                  const TrainOptions& opts) {
    opts.sched.validate();
    const std::vector<size_t> train_idx = data.train_indices();
    const std::vector<size_t> val_idx = data.val_indices();
    check(!train_idx.empty(), "train: training split is empty");
    check(!val_idx.empty(), "train: validation split is empty");

    const Resolution data_res{data.manifest.h, data.manifest.w};
    const bool fixed_arch =
        opts.strategy == Strategy::Baseline || opts.strategy == Strategy::SelfKd;
    if (fixed_arch)
        check(arch.resolution == data_res, "train: arch resolution ", arch.resolution.h, "x",
              arch.resolution.w, " does not match dataset resolution ", data_res.h, "x",
              data_res.w);

    const Rng root(opts.seed);
    SgdMomentum<float> opt(store.param_data().size());
    TrainResult result;
    TrainState state;
    if (opts.strategy == Strategy::SelfKd)
        state.teacher = std::make_shared<ParameterStore<double>>(store.space());

    Rng roster_rng = root.fork("roster");
    const ArchConfig min_cfg =
        with_resolution(sample_subnet(store.space(), SampleMode::Min, roster_rng), data_res);
    const ArchConfig max_cfg =
        with_resolution(sample_subnet(store.space(), SampleMode::Max, roster_rng), data_res);
    const ArchConfig& val_cfg = fixed_arch ? arch : max_cfg;

    std::ofstream log_out;
    if (!opts.log_path.empty()) {
        log_out.open(opts.log_path, std::ios::binary | std::ios::trunc);
        check(log_out.good(), "train: cannot open log file ", opts.log_path);
    }

    ExecutableNet<float> student_net = build_network(fixed_arch ? arch : min_cfg, store);
    ExecutableNet<float> max_net = build_network(max_cfg, store);
    ExecutableNet<float> min_net = build_network(min_cfg, store);

    Rng subnet_rng = root.fork("subnets");
    int64_t step_index = 0;

    for (int epoch = 1; epoch <= opts.sched.epochs; ++epoch) {
        state.epoch = epoch;
        const double lr = cosine_lr(static_cast<double>(epoch - 1), opts.sched);

        std::vector<size_t> order = train_idx;
        {
            Rng shuffle_rng = root.fork("order").fork(static_cast<uint64_t>(epoch));
            for (size_t i = order.size(); i-- > 1;)
                std::swap(order[i], order[shuffle_rng.next_below(i + 1)]);
        }

        // Teacher for this epoch's targets; rebuilt so views track the store.
        std::optional<ExecutableNet<double>> teacher_net;
        if (opts.strategy == Strategy::SelfKd && epoch > 1)
            teacher_net.emplace(plan_network(arch), *state.teacher);

        const int64_t student_fwd_before = store.forward_count;
        const int64_t teacher_fwd_before = state.teacher ? state.teacher->forward_count : 0;

        double loss_sum = 0.0;
        int64_t loss_terms = 0;
        int64_t batches = 0;
        for (const auto& [begin, count] :
             batch_windows(order.size(), static_cast<size_t>(opts.sched.batch_size))) {
            Batch batch = make_batch(data, order, begin, count);
            Tape<float> tape;
            TapeScope<float> scope(tape);
            TensorF step_loss;
            int terms = 0;

            switch (opts.strategy) {
                case Strategy::Baseline: {
                    TensorF P = student_net.forward_saliency(batch.images, BnMode::Train);
                    step_loss = batch_mean_loss(P, batch.density, batch.fixations, opts.loss);
                    terms = 1;
                    break;
                }
                case Strategy::SelfKd: {
                    TensorF target = batch.density;
                    if (epoch > 1) {
                        TensorD p_avg =
                            teacher_net->forward_saliency(batch.images.cast<double>(), BnMode::Eval);
                        target = blend_target(batch.density, p_avg.cast<float>(),
                                              opts.sched.alpha);
                    }
                    TensorF P = student_net.forward_saliency(batch.images, BnMode::Train);
                    step_loss = batch_mean_loss(P, target, batch.fixations, opts.loss);
                    terms = 1;
                    break;
                }
                case Strategy::Sandwich: {
                    ArchConfig r1 = with_resolution(
                        sample_subnet(store.space(), SampleMode::UniformRandom, subnet_rng),
                        data_res);
                    ArchConfig r2 = with_resolution(
                        sample_subnet(store.space(), SampleMode::UniformRandom, subnet_rng),
                        data_res);
                    // Gradients from all four subnets aggregate in the shared
                    // store before the single optimizer step.
                    const ExecutableNet<float> n1 = build_network(r1, store);
                    const ExecutableNet<float> n2 = build_network(r2, store);
                    const ExecutableNet<float>* roster[4] = {&min_net, &max_net, &n1, &n2};
                    for (const ExecutableNet<float>* net : roster) {
                        TensorF P = net->forward_saliency(batch.images, BnMode::Train);
                        TensorF l = batch_mean_loss(P, batch.density, batch.fixations, opts.loss);
                        step_loss = (terms == 0) ? l : add(step_loss, l);
                        ++terms;
                    }
                    break;
                }
                case Strategy::InplaceDistill: {
                    TensorF P_max = max_net.forward_saliency(batch.images, BnMode::Train);
                    step_loss = batch_mean_loss(P_max, batch.density, batch.fixations, opts.loss);
                    terms = 1;
                    // Soft labels from the biggest subnet, detached so the
                    // smaller subnets' losses cannot reach its graph.
                    TensorF soft = detach(P_max);
                    ArchConfig r1 = with_resolution(
                        sample_subnet(store.space(), SampleMode::UniformRandom, subnet_rng),
                        data_res);
                    ArchConfig r2 = with_resolution(
                        sample_subnet(store.space(), SampleMode::UniformRandom, subnet_rng),
                        data_res);
                    const ExecutableNet<float> n1 = build_network(r1, store);
                    const ExecutableNet<float> n2 = build_network(r2, store);
                    const ExecutableNet<float>* smaller[3] = {&min_net, &n1, &n2};
                    for (const ExecutableNet<float>* net : smaller) {
                        TensorF P = net->forward_saliency(batch.images, BnMode::Train);
                        step_loss = add(step_loss,
                                        batch_mean_loss(P, soft, batch.fixations, opts.loss));
                        ++terms;
                    }
                    break;
                }
            }

            const double lv = static_cast<double>(step_loss.data()[0]);
            check(std::isfinite(lv), "train: non-finite loss ", lv, " at epoch ", epoch,
                  ", step ", step_index, " (diverged)");
            loss_sum += lv / terms;
            ++loss_terms;

            store.zero_grad();
            tape.backward(step_loss);
            opt.step(store.param_data(), store.grad_data(), lr, opts.sched.momentum);
            ++batches;
            ++step_index;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.train_loss = loss_sum / static_cast<double>(loss_terms);
        rec.student_forwards = store.forward_count - student_fwd_before;
        rec.teacher_target_forwards =
            state.teacher ? state.teacher->forward_count - teacher_fwd_before : 0;
        rec.backwards = batches;

        rec.val_loss = validation_loss(store, data, val_cfg, val_idx, opts.loss,
                                       opts.sched.batch_size);

        if (opts.strategy == Strategy::SelfKd && rec.val_loss < state.best_val_loss) {
            state.best_val_loss = rec.val_loss;
            update_teacher(state, store, opts.teacher_pairwise_average);
            const int64_t before = state.teacher->forward_count;
            recalibrate_teacher_bn(*state.teacher, data, arch, train_idx, opts.sched.batch_size);
            result.bn_recalibration_forwards += state.teacher->forward_count - before;
            rec.teacher_accepted = true;
            if (opts.keep_accepted_snapshots) result.snapshots.push_back(store.param_data());
        }
        result.best_val_loss = result.log.empty()
                                   ? rec.val_loss
                                   : std::min(result.best_val_loss, rec.val_loss);
        result.log.push_back(rec);

        if (log_out.is_open()) {
            log_out << epoch_record_to_json(rec, opts.strategy, opts.seed);
            log_out.flush();
        }
    }

    result.accepted_count = state.accepted_count;
    if (opts.strategy == Strategy::SelfKd) result.teacher = state.teacher;
    return result;
}

std::string epoch_record_to_json(const EpochRecord& rec, Strategy strategy, uint64_t seed) {
    nlohmann::ordered_json j;
    j["epoch"] = rec.epoch;
    j["lr"] = rec.lr;
    j["train_loss"] = rec.train_loss;
    j["val_loss"] = rec.val_loss;
    j["teacher_accepted"] = rec.teacher_accepted;
    j["strategy"] = strategy_name(strategy);
    j["seed"] = seed;
    return j.dump() + "\n";
}

}  // namespace sal
