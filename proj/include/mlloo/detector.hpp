#ifndef MLLOO_DETECTOR_HPP
#define MLLOO_DETECTOR_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "mlloo/dispersion.hpp"
#include "mlloo/tensor.hpp"

namespace mlloo {

// Single-statistic rule: score above the threshold means adversarial.
struct ThresholdDetector {
    StatKind stat_kind = StatKind::IQR;
    double threshold = 0.0;
    bool above_is_adversarial = true;

    bool is_adversarial(double score) const {
        return above_is_adversarial ? score > threshold : score < threshold;
    }
};

// Smallest threshold whose empirical false-positive rate on the natural
// training scores does not exceed fpr_target (rule: score > threshold).
inline ThresholdDetector fit_threshold(const std::vector<double>& nat_scores,
                                       const std::vector<double>& adv_scores, double fpr_target,
                                       StatKind kind = StatKind::IQR) {
    detail::check(!nat_scores.empty() && !adv_scores.empty(), "fit_threshold: empty scores");
    detail::check(fpr_target >= 0.0 && fpr_target <= 1.0, "fit_threshold: bad fpr target");
    std::vector<double> nat = nat_scores;
    std::sort(nat.begin(), nat.end());
    const std::size_t n = nat.size();
    const std::size_t allowed =
        static_cast<std::size_t>(std::floor(fpr_target * static_cast<double>(n) + 1e-12));

    ThresholdDetector det;
    det.stat_kind = kind;
    det.threshold = (allowed >= n) ? nat.front() - 1.0 : nat[n - 1 - allowed];
    return det;
}

// Logistic regression over standardized dispersion features; adversarial = 1.
struct LogisticDetector {
    std::vector<double> weights;
    double bias = 0.0;
    std::vector<double> feature_mean;
    std::vector<double> feature_scale;  // entries > 0; zero-variance features get 1
    std::uint64_t selection_hash = 0;
    StatKind stat_kind = StatKind::IQR;
    double lambda = 0.0;
    std::uint64_t seed = 0;
};

namespace detail {

inline double sigmoid(double z) {
    if (z >= 0.0) {
        const double e = std::exp(-z);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

} // namespace detail

// Fit by full-batch gradient descent from zero initialization on the
// standardized features, minimizing mean logistic loss + lambda*||w||^2.
// The learning rate is halved whenever a step would increase the loss
// (convexity makes consecutive halvings a red flag; tests watch for it).
inline LogisticDetector fit_logistic(const std::vector<std::vector<double>>& nat,
                                     const std::vector<std::vector<double>>& adv, double lambda,
                                     std::size_t iters, double lr, std::uint64_t seed,
                                     std::uint64_t selection_hash = 0,
                                     StatKind kind = StatKind::IQR,
                                     int* consecutive_halvings_out = nullptr) {
    detail::check(!nat.empty() && !adv.empty(), "fit_logistic: need rows for both classes");
    detail::check(lambda >= 0.0, "fit_logistic: negative lambda");
    const std::size_t m = nat[0].size();
    for (const auto& r : nat) detail::check(r.size() == m, "fit_logistic: ragged features");
    for (const auto& r : adv) detail::check(r.size() == m, "fit_logistic: ragged features");

    const std::size_t n = nat.size() + adv.size();
    std::vector<std::vector<double>> xs;
    xs.reserve(n);
    std::vector<double> ys;
    ys.reserve(n);
    for (const auto& r : nat) {
        xs.push_back(r);
        ys.push_back(0.0);
    }
    for (const auto& r : adv) {
        xs.push_back(r);
        ys.push_back(1.0);
    }

    LogisticDetector det;
    det.selection_hash = selection_hash;
    det.stat_kind = kind;
    det.lambda = lambda;
    det.seed = seed;
    det.feature_mean.assign(m, 0.0);
    det.feature_scale.assign(m, 1.0);
    for (const auto& r : xs)
        for (std::size_t j = 0; j < m; ++j) det.feature_mean[j] += r[j];
    for (std::size_t j = 0; j < m; ++j) det.feature_mean[j] /= static_cast<double>(n);
    std::vector<double> var(m, 0.0);
    for (const auto& r : xs)
        for (std::size_t j = 0; j < m; ++j) {
            const double dv = r[j] - det.feature_mean[j];
            var[j] += dv * dv;
        }
    for (std::size_t j = 0; j < m; ++j) {
        var[j] /= static_cast<double>(n);
        det.feature_scale[j] = var[j] > 0.0 ? std::sqrt(var[j]) : 1.0;
    }

    // standardize once up front
    for (auto& r : xs)
        for (std::size_t j = 0; j < m; ++j) r[j] = (r[j] - det.feature_mean[j]) / det.feature_scale[j];

    std::vector<double> w(m, 0.0);
    double b = 0.0;
    const double inv_n = 1.0 / static_cast<double>(n);

    auto loss_at = [&](const std::vector<double>& wv, double bv) {
        double loss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double z = bv;
            for (std::size_t j = 0; j < m; ++j) z += wv[j] * xs[i][j];
            // -log p(y|x) written stably in terms of z
            const double zy = ys[i] > 0.5 ? z : -z;
            loss += zy >= 0.0 ? std::log1p(std::exp(-zy)) : -zy + std::log1p(std::exp(zy));
        }
        loss *= inv_n;
        for (std::size_t j = 0; j < m; ++j) loss += lambda * wv[j] * wv[j];
        return loss;
    };

    double cur_loss = loss_at(w, b);
    int consecutive_halving_iters = 0, max_consecutive = 0;
    std::vector<double> gw(m);
    for (std::size_t it = 0; it < iters; ++it) {
        std::fill(gw.begin(), gw.end(), 0.0);
        double gb = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double z = b;
            for (std::size_t j = 0; j < m; ++j) z += w[j] * xs[i][j];
            const double r = detail::sigmoid(z) - ys[i];
            gb += r;
            for (std::size_t j = 0; j < m; ++j) gw[j] += r * xs[i][j];
        }
        gb *= inv_n;
        for (std::size_t j = 0; j < m; ++j) gw[j] = gw[j] * inv_n + 2.0 * lambda * w[j];

        // backtrack within the iteration until the convex objective decreases;
        // the shrunken rate persists, so later iterations do not backtrack again
        bool halved_here = false;
        std::vector<double> w_new(m);
        double b_new = 0.0, new_loss = 0.0;
        for (int attempt = 0;; ++attempt) {
            for (std::size_t j = 0; j < m; ++j) w_new[j] = w[j] - lr * gw[j];
            b_new = b - lr * gb;
            new_loss = loss_at(w_new, b_new);
            if (!std::isfinite(new_loss)) throw std::runtime_error("fit_logistic: non-finite loss");
            if (new_loss <= cur_loss) break;
            detail::check(attempt < 120, "fit_logistic: step size collapsed");
            lr *= 0.5;
            halved_here = true;
        }
        if (halved_here) {
            ++consecutive_halving_iters;
            max_consecutive = std::max(max_consecutive, consecutive_halving_iters);
        } else {
            consecutive_halving_iters = 0;
        }
        w = std::move(w_new);
        b = b_new;
        cur_loss = new_loss;
    }

    det.weights = std::move(w);
    det.bias = b;
    if (consecutive_halvings_out) *consecutive_halvings_out = max_consecutive;
    return det;
}

// Gradient norm of the fitting objective at the detector's parameters, used
// by convergence audits.
inline double logistic_gradient_norm(const LogisticDetector& det,
                                     const std::vector<std::vector<double>>& nat,
                                     const std::vector<std::vector<double>>& adv) {
    const std::size_t m = det.weights.size();
    const std::size_t n = nat.size() + adv.size();
    std::vector<double> gw(m, 0.0);
    double gb = 0.0;
    auto add = [&](const std::vector<double>& raw, double y) {
        double z = det.bias;
        std::vector<double> sx(m);
        for (std::size_t j = 0; j < m; ++j) {
            sx[j] = (raw[j] - det.feature_mean[j]) / det.feature_scale[j];
            z += det.weights[j] * sx[j];
        }
        const double r = detail::sigmoid(z) - y;
        gb += r;
        for (std::size_t j = 0; j < m; ++j) gw[j] += r * sx[j];
    };
    for (const auto& r : nat) add(r, 0.0);
    for (const auto& r : adv) add(r, 1.0);
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        const double g = gw[j] / static_cast<double>(n) + 2.0 * det.lambda * det.weights[j];
        s += g * g;
    }
    const double g0 = gb / static_cast<double>(n);
    return std::sqrt(s + g0 * g0);
}

inline double score(const LogisticDetector& det, const DispersionFeatures& f) {
    detail::check(f.selection_hash == det.selection_hash,
                  "score: features come from a different layer selection");
    detail::check(f.values.size() == det.weights.size(), "score: feature dimension mismatch");
    double z = det.bias;
    for (std::size_t j = 0; j < det.weights.size(); ++j)
        z += det.weights[j] * (f.values[j] - det.feature_mean[j]) / det.feature_scale[j];
    return detail::sigmoid(z);
}

inline double score_raw(const LogisticDetector& det, const std::vector<double>& raw) {
    detail::check(raw.size() == det.weights.size(), "score_raw: feature dimension mismatch");
    double z = det.bias;
    for (std::size_t j = 0; j < det.weights.size(); ++j)
        z += det.weights[j] * (raw[j] - det.feature_mean[j]) / det.feature_scale[j];
    return detail::sigmoid(z);
}

enum class Verdict { Adversarial, Natural };

// Ties go to natural.
inline Verdict classify(const LogisticDetector& det, const DispersionFeatures& f,
                        double threshold) {
    return score(det, f) > threshold ? Verdict::Adversarial : Verdict::Natural;
}

inline Verdict classify(const ThresholdDetector& det, double statistic) {
    return det.is_adversarial(statistic) ? Verdict::Adversarial : Verdict::Natural;
}

} // namespace mlloo

#endif // MLLOO_DETECTOR_HPP
