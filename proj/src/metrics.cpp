#include "supersal/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "json.hpp"

namespace sal {
namespace {

template <typename T>
std::vector<double> gather(const Tensor<T>& t) {
    std::vector<double> out;
    out.reserve(static_cast<size_t>(t.numel()));
    const T* p = t.data();
    t.for_each_offset([&](int64_t off) { out.push_back(static_cast<double>(p[off])); });
    return out;
}

void check_same_size(size_t a, size_t b, const char* op) {
    check(a == b, op, ": element count mismatch ", a, " vs ", b);
}

std::vector<double> renormalized(std::vector<double> v, const char* op) {
    double s = 0.0;
    for (double x : v) {
        check(x >= 0.0, op, ": negative entry ", x);
        s += x;
    }
    check(s > 0.0, op, ": map sums to ", s, ", cannot renormalize");
    for (double& x : v) x /= s;
    return v;
}

}  // namespace

template <typename T>
double eval_cc(const Tensor<T>& P, const Tensor<T>& G) {
    check(P.shape() == G.shape(), "eval_cc: shape mismatch ", shape_str(P.shape()), " vs ",
          shape_str(G.shape()));
    const auto p = gather(P), g = gather(G);
    const double n = static_cast<double>(p.size());
    double mp = 0.0, mg = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        mp += p[i];
        mg += g[i];
    }
    mp /= n;
    mg /= n;
    double cov = 0.0, vp = 0.0, vg = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        cov += (p[i] - mp) * (g[i] - mg);
        vp += (p[i] - mp) * (p[i] - mp);
        vg += (g[i] - mg) * (g[i] - mg);
    }
    if (vp == 0.0 || vg == 0.0) return 0.0;  // constant map convention
    return (cov / n) / (std::sqrt(vp / n) * std::sqrt(vg / n));
}

template <typename T>
double eval_kld(const Tensor<T>& P, const Tensor<T>& G, double epsilon) {
    check(P.shape() == G.shape(), "eval_kld: shape mismatch ", shape_str(P.shape()), " vs ",
          shape_str(G.shape()));
    const auto p = renormalized(gather(P), "eval_kld");
    const auto g = renormalized(gather(G), "eval_kld");
    double acc = 0.0;
    for (size_t i = 0; i < p.size(); ++i) acc += g[i] * std::log(epsilon + g[i] / (p[i] + epsilon));
    return acc;
}

template <typename T>
double eval_nss(const Tensor<T>& P, const Tensor<T>& F) {
    check(P.shape() == F.shape(), "eval_nss: shape mismatch ", shape_str(P.shape()), " vs ",
          shape_str(F.shape()));
    const auto p = gather(P);
    const auto f = gather(F);
    const double n = static_cast<double>(p.size());
    double mu = 0.0;
    for (double x : p) mu += x;
    mu /= n;
    double var = 0.0;
    for (double x : p) var += (x - mu) * (x - mu);
    var /= n;
    check(var > 0.0, "eval_nss: P is constant, z-scores undefined");
    const double sd = std::sqrt(var);
    double acc = 0.0;
    int64_t n_fix = 0;
    for (size_t i = 0; i < p.size(); ++i) {
        check(f[i] == 0.0 || f[i] == 1.0, "eval_nss: fixation entry ", f[i], " is not binary");
        if (f[i] == 1.0) {
            acc += (p[i] - mu) / sd;
            ++n_fix;
        }
    }
    check(n_fix >= 1, "eval_nss: fixation map has no fixations");
    return acc / static_cast<double>(n_fix);
}

template <typename T>
double eval_sim(const Tensor<T>& P, const Tensor<T>& G) {
    check(P.shape() == G.shape(), "eval_sim: shape mismatch ", shape_str(P.shape()), " vs ",
          shape_str(G.shape()));
    const auto p = renormalized(gather(P), "eval_sim");
    const auto g = renormalized(gather(G), "eval_sim");
    double acc = 0.0;
    for (size_t i = 0; i < p.size(); ++i) acc += std::min(p[i], g[i]);
    return acc;
}

template <typename T>
double eval_auc(const Tensor<T>& P, const Tensor<T>& F) {
    check(P.shape() == F.shape(), "eval_auc: shape mismatch ", shape_str(P.shape()), " vs ",
          shape_str(F.shape()));
    const auto p = gather(P);
    const auto f = gather(F);
    std::vector<double> pos, neg;
    for (size_t i = 0; i < p.size(); ++i) {
        check(f[i] == 0.0 || f[i] == 1.0, "eval_auc: fixation entry ", f[i], " is not binary");
        (f[i] == 1.0 ? pos : neg).push_back(p[i]);
    }
    check(!pos.empty(), "eval_auc: fixation map has no fixations");
    check(!neg.empty(), "eval_auc: every pixel is fixated, no negatives");

    std::sort(pos.begin(), pos.end(), std::greater<>());
    std::sort(neg.begin(), neg.end(), std::greater<>());
    const double np = static_cast<double>(pos.size());
    const double nn = static_cast<double>(neg.size());

    // Sweep thresholds at each distinct positive value, descending; a final
    // point at (1,1) closes the curve. Negatives strictly above a threshold
    // enter first as a horizontal segment; negatives equal to it share the
    // diagonal tie segment, whose trapezoid awards exactly half credit.
    double area = 0.0;
    double prev_fpr = 0.0, prev_tpr = 0.0;
    size_t pi = 0, ni = 0;
    while (pi < pos.size()) {
        const double thr = pos[pi];
        while (ni < neg.size() && neg[ni] > thr) ++ni;
        double fpr = static_cast<double>(ni) / nn;
        area += (fpr - prev_fpr) * prev_tpr;  // horizontal: rectangle
        prev_fpr = fpr;
        while (pi < pos.size() && pos[pi] >= thr) ++pi;
        while (ni < neg.size() && neg[ni] >= thr) ++ni;
        const double tpr = static_cast<double>(pi) / np;
        fpr = static_cast<double>(ni) / nn;
        area += (fpr - prev_fpr) * (prev_tpr + tpr) / 2.0;
        prev_fpr = fpr;
        prev_tpr = tpr;
    }
    area += (1.0 - prev_fpr) * (prev_tpr + 1.0) / 2.0;
    return area;
}

template <typename T>
MetricReport eval_all(const Tensor<T>& P, const Tensor<T>& G, const Tensor<T>& F) {
    MetricReport r;
    r.cc = eval_cc(P, G);
    r.kld = eval_kld(P, G);
    r.nss = eval_nss(P, F);
    r.sim = eval_sim(P, G);
    r.auc = eval_auc(P, F);
    return r;
}

MetricReport aggregate_reports(const std::vector<MetricReport>& reports) {
    check(!reports.empty(), "aggregate_reports: no per-image reports");
    MetricReport agg;
    for (const MetricReport& r : reports) {
        agg.cc += r.cc;
        agg.kld += r.kld;
        agg.nss += r.nss;
        agg.sim += r.sim;
        agg.auc += r.auc;
    }
    const double n = static_cast<double>(reports.size());
    agg.cc /= n;
    agg.kld /= n;
    agg.nss /= n;
    agg.sim /= n;
    agg.auc /= n;
    return agg;
}

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string report_to_json(const MetricReport& report) {
    nlohmann::ordered_json j;
    j["cc"] = report.cc;
    j["kld"] = report.kld;
    j["nss"] = report.nss;
    j["sim"] = report.sim;
    j["auc"] = report.auc;
    return j.dump(2) + "\n";
}

std::string reports_to_csv(const std::vector<MetricReport>& reports) {
    std::string out = "image,cc,kld,nss,sim,auc\n";
    for (size_t i = 0; i < reports.size(); ++i) {
        const MetricReport& r = reports[i];
        out += std::to_string(i) + "," + format_double(r.cc) + "," + format_double(r.kld) + "," +
               format_double(r.nss) + "," + format_double(r.sim) + "," + format_double(r.auc) +
               "\n";
    }
    return out;
}

#define SAL_INSTANTIATE_METRICS(T)                                              \
    template double eval_cc<T>(const Tensor<T>&, const Tensor<T>&);             \
    template double eval_kld<T>(const Tensor<T>&, const Tensor<T>&, double);    \
    template double eval_nss<T>(const Tensor<T>&, const Tensor<T>&);            \
    template double eval_sim<T>(const Tensor<T>&, const Tensor<T>&);            \
    template double eval_auc<T>(const Tensor<T>&, const Tensor<T>&);            \
    template MetricReport eval_all<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);

SAL_INSTANTIATE_METRICS(float)
SAL_INSTANTIATE_METRICS(double)

}  // namespace sal
