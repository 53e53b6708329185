#pragma once

#include <cmath>

#include "supersal/common.hpp"

namespace sal {

// Training hyperparameters. Defaults are the production settings: SGD with
// momentum 0.9, lr 0.1, cosine annealing with restarts every 10 epochs, 20
// epochs, batch 64, blend weight 0.5. Desk-scale runs override batch size
// and epochs.
struct ScheduleConfig {
    double lr_max = 0.1;
    double lr_min = 0.0;
    int t0 = 10;  // restart period in epochs
    int epochs = 20;
    double momentum = 0.9;
    int batch_size = 64;
    double alpha = 0.5;  // Self-KD ground-truth blend weight

    void validate() const {
        check(t0 >= 1, "schedule: T0 must be >= 1, got ", t0);
        check(epochs >= 1, "schedule: epochs must be >= 1, got ", epochs);
        check(alpha >= 0.0 && alpha <= 1.0, "schedule: alpha must be in [0, 1], got ", alpha);
        check(batch_size >= 1, "schedule: batch size must be >= 1, got ", batch_size);
        check(lr_max >= lr_min, "schedule: lr_max below lr_min");
    }
};

// Cosine annealing with warm restarts:
// lr(t) = lr_min + 0.5*(lr_max - lr_min)*(1 + cos(pi * (t mod T0) / T0)).
// Hits lr_max at every multiple of T0.
inline double cosine_lr(double t, const ScheduleConfig& cfg) {
    check(t >= 0.0, "cosine_lr: t must be >= 0, got ", t);
    cfg.validate();
    const double phase = std::fmod(t, static_cast<double>(cfg.t0));
    return cfg.lr_min +
           0.5 * (cfg.lr_max - cfg.lr_min) *
               (1.0 + std::cos(3.14159265358979323846 * phase / static_cast<double>(cfg.t0)));
}

}  // namespace sal
