#pragma once

#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "supersal/data.hpp"
#include "supersal/losses.hpp"
#include "supersal/schedule.hpp"
#include "supersal/search_space.hpp"
#include "supersal/supernet.hpp"

namespace sal {

enum class Strategy { Baseline, SelfKd, Sandwich, InplaceDistill };

std::string strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& name);

// gt_bar = p_avg + (gt - p_avg) * alpha, renormalized so each image sums
// to 1. Plain data op, never part of a gradient path.
TensorF blend_target(const TensorF& gt, const TensorF& p_avg, double alpha);

// Cross-validated averaged teacher. accepted_count snapshots have been
// folded into the running mean; the store is double so the mean stays exact
// against a direct average of the kept snapshots.
struct TrainState {
    std::shared_ptr<ParameterStore<double>> teacher;  // S_avg, layout mirrors the student
    int accepted_count = 0;
    double best_val_loss = std::numeric_limits<double>::infinity();
    int epoch = 0;
};

// Folds the student's parameters into the teacher. First acceptance copies;
// afterwards S_avg <- (S_avg*n + S)/(n+1), or the pairwise (S_avg + S)/2
// when `pairwise` is set. Batch-norm buffers are not averaged: they are
// recalibrated by a data pass after each acceptance.
void update_teacher(TrainState& state, const ParameterStore<float>& student, bool pairwise);

struct TrainOptions {
    Strategy strategy = Strategy::Baseline;
    ScheduleConfig sched;
    LossConfig loss;
    uint64_t seed = 0;
    bool teacher_pairwise_average = false;
    bool keep_accepted_snapshots = false;  // retained for the averaging oracle in tests
    std::string log_path;                  // JSON-lines, one record per epoch
};

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    bool teacher_accepted = false;
    // Bookkeeping for the training batches of this epoch (validation and
    // teacher recalibration forwards are counted separately).
    int64_t student_forwards = 0;
    int64_t teacher_target_forwards = 0;
    int64_t backwards = 0;
};

struct TrainResult {
    std::vector<EpochRecord> log;
    int accepted_count = 0;
    double best_val_loss = 0.0;
    std::shared_ptr<ParameterStore<double>> teacher;     // Self-KD only
    std::vector<std::vector<float>> snapshots;           // accepted student params, if kept
    int64_t bn_recalibration_forwards = 0;
};

// Trains `arch` (resolution must match the dataset) on the train split and
// validates on the val split every epoch. Sandwich and inplace distillation
// ignore `arch` and sample subnets from the store's space per step; their
// validation runs the max config. A non-finite loss aborts with an error.
TrainResult train(ParameterStore<float>& store, const Dataset& data, const ArchConfig& arch,
                  const TrainOptions& opts);

// Mean per-image combined loss of `config` over `indices`, eval-mode norms.
double validation_loss(const ParameterStore<float>& store, const Dataset& data,
                       const ArchConfig& config, const std::vector<size_t>& indices,
                       const LossConfig& cfg, int batch_size);

std::string epoch_record_to_json(const EpochRecord& rec, Strategy strategy, uint64_t seed);

}  // namespace sal
