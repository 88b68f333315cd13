#ifndef MLLOO_EVALUATION_HPP
#define MLLOO_EVALUATION_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "mlloo/detector.hpp"
#include "mlloo/tensor.hpp"

namespace mlloo {

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
    double threshold = 0.0;
};

struct RocCurve {
    std::vector<RocPoint> points;  // fpr ascending, (0,0) to (1,1)
    std::size_t n_nat = 0;
    std::size_t n_adv = 0;
};

// Threshold sweep over the union of observed scores with the rule
// score > threshold => adversarial. Tied scores enter both counts at once,
// producing diagonal segments (Mann-Whitney tie handling).
inline RocCurve roc_curve(const std::vector<double>& nat_scores,
                          const std::vector<double>& adv_scores) {
    detail::check(!nat_scores.empty() && !adv_scores.empty(), "roc_curve: empty scores");
    RocCurve roc;
    roc.n_nat = nat_scores.size();
    roc.n_adv = adv_scores.size();

    std::vector<double> all;
    all.reserve(nat_scores.size() + adv_scores.size());
    all.insert(all.end(), nat_scores.begin(), nat_scores.end());
    all.insert(all.end(), adv_scores.begin(), adv_scores.end());
    std::sort(all.begin(), all.end(), std::greater<double>());
    all.erase(std::unique(all.begin(), all.end()), all.end());

    std::vector<double> nat = nat_scores, adv = adv_scores;
    std::sort(nat.begin(), nat.end(), std::greater<double>());
    std::sort(adv.begin(), adv.end(), std::greater<double>());

    roc.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
    std::size_t ni = 0, ai = 0;
    for (double v : all) {
        while (ni < nat.size() && nat[ni] >= v) ++ni;
        while (ai < adv.size() && adv[ai] >= v) ++ai;
        // threshold just below v admits every score >= v
        roc.points.push_back({static_cast<double>(ni) / static_cast<double>(nat.size()),
                              static_cast<double>(ai) / static_cast<double>(adv.size()),
                              v});
    }
    return roc;
}

// Trapezoidal area; identical to the Mann-Whitney statistic because tied
// scores produce diagonal segments.
inline double auc(const RocCurve& roc) {
    detail::check(roc.points.size() >= 2, "auc: degenerate curve");
    double area = 0.0;
    for (std::size_t i = 1; i < roc.points.size(); ++i) {
        const RocPoint& a = roc.points[i - 1];
        const RocPoint& b = roc.points[i];
        area += (b.fpr - a.fpr) * 0.5 * (a.tpr + b.tpr);
    }
    return area;
}

inline double auc(const std::vector<double>& nat_scores, const std::vector<double>& adv_scores) {
    return auc(roc_curve(nat_scores, adv_scores));
}

// TPR at the most liberal threshold whose empirical FPR stays within the
// target (same threshold rule as fit_threshold).
inline double tpr_at_fpr(const std::vector<double>& nat_scores,
                         const std::vector<double>& adv_scores, double fpr_target) {
    detail::check(!nat_scores.empty() && !adv_scores.empty(), "tpr_at_fpr: empty scores");
    ThresholdDetector det = fit_threshold(nat_scores, adv_scores, fpr_target);
    std::size_t tp = 0;
    for (double s : adv_scores) tp += s > det.threshold ? 1 : 0;
    return static_cast<double>(tp) / static_cast<double>(adv_scores.size());
}

} // namespace mlloo

#endif // MLLOO_EVALUATION_HPP
