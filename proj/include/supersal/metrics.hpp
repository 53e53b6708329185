#pragma once

#include <string>
#include <vector>

#include "supersal/tensor.hpp"

namespace sal {

// Evaluation-time scores for one prediction/ground-truth pair. Unlike the
// training losses these are in benchmark conventions: cc in [-1,1], nss is
// the raw z-score mean (no sigmoid), auc/sim in [0,1].
struct MetricReport {
    double cc = 0.0;
    double kld = 0.0;
    double nss = 0.0;
    double sim = 0.0;
    double auc = 0.0;
};

// Pearson correlation, population statistics; 0 if either map is constant.
template <typename T>
double eval_cc(const Tensor<T>& P, const Tensor<T>& G);

// KLD with both maps renormalized to sum 1 first.
template <typename T>
double eval_kld(const Tensor<T>& P, const Tensor<T>& G, double epsilon = 1e-8);

// Mean z-scored saliency at fixated pixels. P must be non-constant, F binary
// with at least one fixation.
template <typename T>
double eval_nss(const Tensor<T>& P, const Tensor<T>& F);

// Histogram intersection of the renormalized maps.
template <typename T>
double eval_sim(const Tensor<T>& P, const Tensor<T>& G);

// Judd-style AUC: positives are P at fixated pixels, negatives P at every
// other pixel; thresholds sweep the distinct positive values; trapezoidal
// area with ties counted half. Equals the pairwise statistic
// [#(pos>neg) + 0.5*#(pos=neg)] / (#pos * #neg).
template <typename T>
double eval_auc(const Tensor<T>& P, const Tensor<T>& F);

template <typename T>
MetricReport eval_all(const Tensor<T>& P, const Tensor<T>& G, const Tensor<T>& F);

// Arithmetic mean of per-image reports.
MetricReport aggregate_reports(const std::vector<MetricReport>& reports);

// JSON object with fixed key order {cc, kld, nss, sim, auc}.
std::string report_to_json(const MetricReport& report);

// CSV with header image,cc,kld,nss,sim,auc and one row per image.
std::string reports_to_csv(const std::vector<MetricReport>& reports);

// Shortest round-trip decimal form, deterministic across runs.
std::string format_double(double v);

}  // namespace sal
