#ifndef MLLOO_ATTACKS_HPP
#define MLLOO_ATTACKS_HPP

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mlloo/net.hpp"
#include "mlloo/parallel.hpp"
#include "mlloo/rng.hpp"
#include "mlloo/tensor.hpp"

namespace mlloo {

enum class AttackKind { FGSM, LinfPGD, CWL2, DeepFool, JSMA, Boundary };

inline const char* attack_kind_name(AttackKind k) {
    switch (k) {
        case AttackKind::FGSM: return "fgsm";
        case AttackKind::LinfPGD: return "linf_pgd";
        case AttackKind::CWL2: return "cw_l2";
        case AttackKind::DeepFool: return "deepfool";
        case AttackKind::JSMA: return "jsma";
        case AttackKind::Boundary: return "boundary";
    }
    return "?";
}

inline AttackKind attack_kind_from_name(const std::string& s) {
    if (s == "fgsm") return AttackKind::FGSM;
    if (s == "linf_pgd") return AttackKind::LinfPGD;
    if (s == "cw_l2") return AttackKind::CWL2;
    if (s == "deepfool") return AttackKind::DeepFool;
    if (s == "jsma") return AttackKind::JSMA;
    if (s == "boundary") return AttackKind::Boundary;
    detail::fail("unknown attack '" + s + "'");
}

// Per-image randomization applied by generate_attack_set.
enum class MixMode { None, ConfidenceGrid, EpsilonGrid };

struct AttackParams {
    AttackKind kind = AttackKind::FGSM;

    // L-inf budget and iteration controls (FGSM / PGD).
    double epsilon = 8.0 / 255.0;
    double step_size = 0.0;  // PGD alpha; 0 means epsilon/10
    std::size_t steps = 40;

    // Carlini-Wagner controls.
    double confidence = 0.0;       // margin offset c
    double tradeoff = 1e-2;        // initial alpha weighting the margin term
    double tradeoff_lo = 1e-5;     // binary-search bracket
    double tradeoff_hi = 1e2;
    std::size_t search_steps = 6;  // outer binary-search steps
    std::size_t max_iters = 500;   // inner optimizer steps per bracket point
    double learning_rate = 0.01;

    // DeepFool.
    double overshoot = 0.02;
    std::size_t max_steps = 50;

    // JSMA.
    double theta = 1.0;
    double gamma = 0.1;

    std::uint64_t seed = 1;
    int targeted = -1;  // >= 0 fixes the JSMA target class

    MixMode mix = MixMode::None;
    std::vector<double> confidence_grid = {1, 3, 5, 7, 9, 11, 13, 15, 17, 19, 21, 23, 25, 27, 29};
    std::vector<double> epsilon_grid = {1.0 / 255, 2.0 / 255, 3.0 / 255, 4.0 / 255,
                                        5.0 / 255, 6.0 / 255, 7.0 / 255, 8.0 / 255};

    // Boundary attack.
    std::size_t boundary_iterations = 2000;

    void validate() const {
        detail::check(epsilon >= 0.0, "AttackParams: epsilon < 0");
        detail::check(gamma > 0.0 && gamma <= 1.0, "AttackParams: gamma outside (0,1]");
        detail::check(tradeoff > 0.0, "AttackParams: tradeoff must be positive");
    }

    double pgd_alpha() const { return step_size > 0.0 ? step_size : epsilon / 10.0; }
};

struct AttackResult {
    Tensor adversarial;
    bool success = false;
    std::vector<double> best_l2_trace;  // boundary attack only
};

// x' = clip01(x + epsilon * sign(grad J)); sign(0) is 0.
inline Tensor fgsm(const Model& model, const Tensor& x, int y_true, double epsilon) {
    detail::check(epsilon >= 0.0, "fgsm: epsilon < 0");
    Tensor g = input_gradient(model, x, LossSpec::cross_entropy(y_true));
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
        out[i] += epsilon * s;
    }
    return clip(out, 0.0, 1.0);
}

// Iterated FGSM: each update ascends the cross-entropy, then clips to the
// epsilon-neighborhood of x intersected with the pixel box.
inline Tensor linf_pgd(const Model& model, const Tensor& x, int y_true, double epsilon,
                       double alpha, std::size_t steps) {
    detail::check(epsilon >= 0.0, "linf_pgd: epsilon < 0");
    detail::check(alpha > 0.0 || steps == 0, "linf_pgd: alpha must be positive");
    Tensor cur = x;
    for (std::size_t s = 0; s < steps; ++s) {
        Tensor g = input_gradient(model, cur, LossSpec::cross_entropy(y_true));
        for (std::size_t i = 0; i < cur.size(); ++i) {
            const double sg = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
            double v = cur[i] + alpha * sg;
            v = std::min(x[i] + epsilon, std::max(x[i] - epsilon, v));
            cur[i] = std::min(1.0, std::max(0.0, v));
        }
    }
    return cur;
}

namespace detail {

struct MarginEval {
    double margin = 0.0;  // best-other logit minus source logit
    int predicted = -1;
    std::size_t best_other = 0;
};

inline MarginEval margin_of(const LayerActivations& acts, std::size_t y) {
    MarginEval ev;
    ev.predicted = acts.predicted_class;
    const Tensor& z = acts.logits;
    bool seen = false;
    for (std::size_t j = 0; j < z.size(); ++j) {
        if (j == y) continue;
        if (!seen || z[j] > z[ev.best_other]) {
            ev.best_other = j;
            seen = true;
        }
    }
    ev.margin = z[ev.best_other] - z[y];
    return ev;
}

} // namespace detail

// Carlini-Wagner L2 (untargeted): minimize ||x'-x||_2 + alpha * margin loss
// over w with x' = 0.5*(tanh(w)+1), Adam inner optimizer, and a log-scale
// binary search on alpha. Success requires the best-other logit to beat the
// source logit by at least `confidence`. When y_true is negative the clean
// prediction is used.
inline AttackResult cw_l2(const Model& model, const Tensor& x, const AttackParams& params,
                          int y_true = -1) {
    params.validate();
    const double kNudge = 1e-6;
    const std::size_t d = x.size();

    LayerActivations clean = forward(model, x);
    const std::size_t y = y_true >= 0 ? static_cast<std::size_t>(y_true)
                                      : static_cast<std::size_t>(clean.predicted_class);
    detail::check(y < clean.logits.size(), "cw_l2: label out of range");
    const double c = params.confidence;

    // tanh-space starting point
    std::vector<double> w0(d);
    for (std::size_t i = 0; i < d; ++i) {
        const double xi = std::min(1.0 - kNudge, std::max(kNudge, x[i]));
        w0[i] = std::atanh(2.0 * xi - 1.0);
    }

    AttackResult best;
    double best_l2 = std::numeric_limits<double>::infinity();

    double alpha = params.tradeoff;
    double lo = params.tradeoff_lo, hi = params.tradeoff_hi;
    for (std::size_t search = 0; search < params.search_steps; ++search) {
        std::vector<double> w = w0, m(d, 0.0), v(d, 0.0);
        Tensor xp(x.shape());
        bool run_success = false;
        double run_best_loss = std::numeric_limits<double>::infinity();
        std::size_t since_improved = 0;

        for (std::size_t it = 0; it < params.max_iters; ++it) {
            std::vector<double> t(d);
            for (std::size_t i = 0; i < d; ++i) {
                t[i] = std::tanh(w[i]);
                xp[i] = 0.5 * (t[i] + 1.0);
            }
            LayerActivations acts = forward(model, xp);
            const detail::MarginEval me = detail::margin_of(acts, y);
            const double l2 = l2_distance(xp, x);
            const double margin_loss = std::max(0.0, -me.margin + c);
            const double loss = l2 + alpha * margin_loss;

            if (me.margin >= c && me.predicted != static_cast<int>(y)) {
                run_success = true;
                if (l2 < best_l2) {
                    best_l2 = l2;
                    best.adversarial = xp;
                    best.success = true;
                }
            }

            // plateau detection, checked on the combined objective
            if (loss < run_best_loss - 1e-9) {
                run_best_loss = loss;
                since_improved = 0;
            } else if (++since_improved > 60) {
                break;
            }

            // gradient of the objective w.r.t. x'
            std::vector<double> gx(d, 0.0);
            if (l2 > 1e-12)
                for (std::size_t i = 0; i < d; ++i) gx[i] = (xp[i] - x[i]) / l2;
            if (margin_loss > 0.0) {
                std::vector<double> seed(acts.logits.size(), 0.0);
                seed[y] = alpha;
                seed[me.best_other] = -alpha;
                Tensor gm = backward_from_logits(model, xp, acts, seed);
                for (std::size_t i = 0; i < d; ++i) gx[i] += gm[i];
            }

            // chain through the tanh reparameterization, then Adam
            const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
            const double bc1 = 1.0 - std::pow(b1, static_cast<double>(it + 1));
            const double bc2 = 1.0 - std::pow(b2, static_cast<double>(it + 1));
            for (std::size_t i = 0; i < d; ++i) {
                const double gw = gx[i] * 0.5 * (1.0 - t[i] * t[i]);
                m[i] = b1 * m[i] + (1.0 - b1) * gw;
                v[i] = b2 * v[i] + (1.0 - b2) * gw * gw;
                w[i] -= params.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
            }
        }

        if (run_success)
            hi = alpha;  // margin reached; try a gentler weighting for a smaller L2
        else
            lo = alpha;
        alpha = std::sqrt(lo * hi);
    }

    if (!best.success) best.adversarial = x;
    return best;
}

// DeepFool: repeated projection onto the nearest linearized class boundary.
// The accumulated perturbation is applied with a (1+overshoot) factor; the
// returned point is clipped to the pixel box.
inline AttackResult deepfool(const Model& model, const Tensor& x, double overshoot,
                             std::size_t max_steps) {
    LayerActivations clean = forward(model, x);
    const std::size_t c0 = static_cast<std::size_t>(clean.predicted_class);
    const std::size_t d = x.size(), classes = clean.logits.size();

    Tensor r_tot(x.shape());
    AttackResult res;
    for (std::size_t step = 0; step <= max_steps; ++step) {
        Tensor cur = x;
        for (std::size_t i = 0; i < d; ++i) cur[i] += (1.0 + overshoot) * r_tot[i];
        Tensor candidate = clip(cur, 0.0, 1.0);
        if (static_cast<std::size_t>(forward(model, candidate).predicted_class) != c0) {
            res.adversarial = candidate;
            res.success = true;
            return res;
        }
        if (step == max_steps) break;

        LayerActivations acts = forward(model, cur);
        Tensor jac = logit_jacobian(model, cur);
        double best_ratio = std::numeric_limits<double>::infinity();
        std::size_t best_j = classes;
        for (std::size_t j = 0; j < classes; ++j) {
            if (j == c0) continue;
            double wn2 = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
                const double wi = jac.at(j, i) - jac.at(c0, i);
                wn2 += wi * wi;
            }
            if (wn2 <= 1e-24) continue;
            const double fj = acts.logits[j] - acts.logits[c0];
            const double ratio = std::abs(fj) / std::sqrt(wn2);
            if (ratio < best_ratio) {
                best_ratio = ratio;
                best_j = j;
            }
        }
        if (best_j == classes) break;  // degenerate jacobian everywhere

        double wn2 = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double wi = jac.at(best_j, i) - jac.at(c0, i);
            wn2 += wi * wi;
        }
        const double fj = acts.logits[best_j] - acts.logits[c0];
        const double scale = std::abs(fj) / wn2;
        for (std::size_t i = 0; i < d; ++i)
            r_tot[i] += scale * (jac.at(best_j, i) - jac.at(c0, i));
    }

    Tensor cur = x;
    for (std::size_t i = 0; i < d; ++i) cur[i] += (1.0 + overshoot) * r_tot[i];
    res.adversarial = clip(cur, 0.0, 1.0);
    res.success = false;
    return res;
}

// Jacobian-based saliency map attack: greedily saturate the feature pair with
// the strongest (target gain) x (other-class drop) product. Targeted; the
// default target is the second-most-likely class of the clean input.
inline AttackResult jsma(const Model& model, const Tensor& x, int target, double theta,
                         double gamma) {
    detail::check(theta > 0.0, "jsma: theta must be positive");
    detail::check(gamma > 0.0 && gamma <= 1.0, "jsma: gamma outside (0,1]");
    LayerActivations clean = forward(model, x);
    const std::size_t d = x.size(), classes = clean.logits.size();

    std::size_t tgt;
    if (target >= 0) {
        tgt = static_cast<std::size_t>(target);
        detail::check(tgt < classes, "jsma: target class out of range");
        detail::check(static_cast<int>(tgt) != clean.predicted_class,
                      "jsma: target equals predicted class");
    } else {
        // second-most-likely class
        const std::size_t top = static_cast<std::size_t>(clean.predicted_class);
        std::size_t second = top == 0 ? 1 : 0;
        for (std::size_t j = 0; j < classes; ++j) {
            if (j == top) continue;
            if (clean.probs[j] > clean.probs[second]) second = j;
        }
        tgt = second;
    }

    AttackResult res;
    res.adversarial = x;
    const std::size_t budget = static_cast<std::size_t>(gamma * static_cast<double>(d));
    if (budget < 2) return res;  // cannot modify a pair

    std::vector<bool> available(d);
    for (std::size_t i = 0; i < d; ++i) available[i] = x[i] < 1.0;
    std::size_t modified = 0;

    while (modified + 2 <= budget) {
        Tensor jac = logit_jacobian(model, res.adversarial);
        std::vector<double> alpha(d, 0.0), beta(d, 0.0);
        for (std::size_t i = 0; i < d; ++i) {
            alpha[i] = jac.at(tgt, i);
            double others = 0.0;
            for (std::size_t j = 0; j < classes; ++j)
                if (j != tgt) others += jac.at(j, i);
            beta[i] = others;
        }

        double best_score = 0.0;
        std::size_t bp = d, bq = d;
        for (std::size_t p = 0; p < d; ++p) {
            if (!available[p]) continue;
            for (std::size_t q = p + 1; q < d; ++q) {
                if (!available[q]) continue;
                const double a = alpha[p] + alpha[q];
                const double b = beta[p] + beta[q];
                if (a <= 0.0 || b >= 0.0) continue;
                const double score = -a * b;
                if (score > best_score) {
                    best_score = score;
                    bp = p;
                    bq = q;
                }
            }
        }
        if (bp == d) break;  // no admissible pair left

        res.adversarial[bp] = std::min(1.0, res.adversarial[bp] + theta);
        res.adversarial[bq] = std::min(1.0, res.adversarial[bq] + theta);
        if (res.adversarial[bp] >= 1.0) available[bp] = false;
        if (res.adversarial[bq] >= 1.0) available[bq] = false;
        modified += 2;

        if (static_cast<std::size_t>(forward(model, res.adversarial).predicted_class) == tgt) {
            res.success = true;
            return res;
        }
    }
    return res;
}

// Decision-only attack: random walk along the decision boundary, alternating
// orthogonal (spherical) proposals with contraction toward the original.
// Only forward passes are issued; the model's gradient counter is untouched.
inline AttackResult boundary_attack(const Model& model, const Tensor& x, std::uint64_t seed,
                                    std::size_t iterations) {
    LayerActivations clean = forward(model, x);
    const int orig = clean.predicted_class;
    const std::size_t d = x.size();
    Rng rng(derive_seed(seed, 0x626f756e64ull));

    auto misclassified = [&](const Tensor& t) {
        return forward(model, t).predicted_class != orig;
    };

    AttackResult res;
    Tensor cur(x.shape());
    bool found = false;
    for (int attempt = 0; attempt < 200 && !found; ++attempt) {
        for (std::size_t i = 0; i < d; ++i) cur[i] = rng.uniform();
        found = misclassified(cur);
    }
    if (!found) {
        res.adversarial = x;
        return res;
    }

    double best_l2 = l2_distance(cur, x);
    res.adversarial = cur;
    res.success = true;

    double sphe_step = 0.01, src_step = 0.01;
    int sphe_window = 0, sphe_accepted = 0;
    int src_window = 0, src_accepted = 0;

    std::vector<double> noise(d);
    Tensor cand(x.shape());
    for (std::size_t it = 0; it < iterations; ++it) {
        const double dist = l2_distance(cur, x);
        if (dist <= 1e-12) break;

        // orthogonal proposal on the sphere around x through cur
        for (std::size_t i = 0; i < d; ++i) noise[i] = rng.normal();
        double dot = 0.0;
        for (std::size_t i = 0; i < d; ++i) dot += noise[i] * (x[i] - cur[i]);
        dot /= dist * dist;
        double nn = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            noise[i] -= dot * (x[i] - cur[i]);
            nn += noise[i] * noise[i];
        }
        nn = std::sqrt(nn);
        if (nn > 1e-12) {
            const double scale = sphe_step * dist / nn;
            for (std::size_t i = 0; i < d; ++i) cand[i] = cur[i] + scale * noise[i];
            double cd = l2_distance(cand, x);
            if (cd > 1e-12) {
                const double proj = dist / cd;
                for (std::size_t i = 0; i < d; ++i) cand[i] = x[i] + proj * (cand[i] - x[i]);
            }
            for (std::size_t i = 0; i < d; ++i) cand[i] = std::min(1.0, std::max(0.0, cand[i]));

            ++sphe_window;
            if (misclassified(cand)) {
                ++sphe_accepted;
                cur = cand;

                // contraction toward the original
                for (std::size_t i = 0; i < d; ++i) cand[i] = cur[i] + src_step * (x[i] - cur[i]);
                ++src_window;
                if (misclassified(cand)) {
                    ++src_accepted;
                    cur = cand;
                }
                const double now = l2_distance(cur, x);
                if (now < best_l2) {
                    best_l2 = now;
                    res.adversarial = cur;
                }
            }
        }

        if (sphe_window >= 10) {
            sphe_step *= (static_cast<double>(sphe_accepted) / sphe_window > 0.25) ? 1.1 : (1.0 / 1.1);
            sphe_step = std::min(1.0, std::max(1e-6, sphe_step));
            sphe_window = sphe_accepted = 0;
        }
        if (src_window >= 10) {
            src_step *= (static_cast<double>(src_accepted) / src_window > 0.5) ? 1.1 : (1.0 / 1.1);
            src_step = std::min(0.9, std::max(1e-6, src_step));
            src_window = src_accepted = 0;
        }
        res.best_l2_trace.push_back(best_l2);
    }
    return res;
}

// -log(1 - p) of the predicted class, with p clamped away from 1.
inline double confidence_level(const Model& model, const Tensor& x) {
    LayerActivations acts = forward(model, x);
    double p = acts.probs[static_cast<std::size_t>(acts.predicted_class)];
    p = std::min(p, 1.0 - 1e-12);
    return -std::log(1.0 - p);
}

inline double confidence_level_from_prob(double p) {
    p = std::min(p, 1.0 - 1e-12);
    return -std::log(1.0 - p);
}

// An original image, its adversarial counterpart, and bookkeeping.
struct PairedExample {
    std::string id;
    std::size_t dataset_index = 0;
    Tensor original;
    Tensor adversarial;
    int original_label = -1;
    int adversarial_label = -1;
    AttackParams attack;
    bool success = false;
    double confidence_level = 0.0;
    double l2_dist = 0.0;
    double linf_dist = 0.0;
};

struct AttackSet {
    AttackParams params;
    std::vector<PairedExample> examples;
    bool partial_warning = false;   // dataset exhausted before n successes
    std::size_t images_scanned = 0; // candidates consumed, including skips
    std::size_t start_index = 0;
    std::size_t end_index = 0;      // first dataset index not consumed

    std::size_t success_count() const {
        std::size_t n = 0;
        for (const auto& e : examples) n += e.success ? 1 : 0;
        return n;
    }
};

inline AttackResult run_attack(const Model& model, const Tensor& x, int y_true,
                               const AttackParams& p) {
    switch (p.kind) {
        case AttackKind::FGSM: {
            Tensor adv = fgsm(model, x, y_true, p.epsilon);
            const bool ok = forward(model, adv).predicted_class != y_true;
            return AttackResult{std::move(adv), ok, {}};
        }
        case AttackKind::LinfPGD: {
            Tensor adv = linf_pgd(model, x, y_true, p.epsilon, p.pgd_alpha(), p.steps);
            const bool ok = forward(model, adv).predicted_class != y_true;
            return AttackResult{std::move(adv), ok, {}};
        }
        case AttackKind::CWL2:
            return cw_l2(model, x, p, y_true);
        case AttackKind::DeepFool:
            return deepfool(model, x, p.overshoot, p.max_steps);
        case AttackKind::JSMA:
            return jsma(model, x, p.targeted, p.theta, p.gamma);
        case AttackKind::Boundary:
            return boundary_attack(model, x, p.seed, p.boundary_iterations);
    }
    detail::fail("run_attack: bad kind");
}

// Walk the dataset in order from start_index, skipping misclassified images,
// attacking the rest until n successes are collected. Mixed variants draw the
// per-image confidence or epsilon from the corresponding grid. Failures stay
// in the set (flagged) so they can be logged; detection pipelines filter on
// `success`. Deterministic for a fixed seed regardless of worker count.
inline AttackSet generate_attack_set(const Model& model, const std::vector<Tensor>& images,
                                     const std::vector<int>& labels, const AttackParams& params,
                                     std::size_t n, std::size_t start_index = 0,
                                     std::size_t workers = 1) {
    params.validate();
    detail::check(images.size() == labels.size(), "generate_attack_set: bad dataset");
    detail::check(start_index <= images.size(), "generate_attack_set: start index out of range");

    AttackSet set;
    set.params = params;
    set.start_index = start_index;

    const std::size_t batch = std::max<std::size_t>(workers * 2, 4);
    std::size_t successes = 0;
    std::size_t idx = start_index;

    while (successes < n && idx < images.size()) {
        const std::size_t count = std::min(batch, images.size() - idx);
        std::vector<std::optional<PairedExample>> slots(count);

        parallel_for(count, workers, [&](std::size_t k) {
            const std::size_t i = idx + k;
            const Tensor& x = images[i];
            LayerActivations acts = forward(model, x);
            if (acts.predicted_class != labels[i]) return;  // skip misclassified

            AttackParams p = params;
            p.seed = derive_seed(params.seed, i);
            if (params.mix == MixMode::ConfidenceGrid) {
                Rng draw(derive_seed(params.seed, i * 2 + 1));
                p.confidence = params.confidence_grid[draw.below(params.confidence_grid.size())];
            } else if (params.mix == MixMode::EpsilonGrid) {
                Rng draw(derive_seed(params.seed, i * 2 + 1));
                p.epsilon = params.epsilon_grid[draw.below(params.epsilon_grid.size())];
            }

            AttackResult r = run_attack(model, x, labels[i], p);
            PairedExample ex;
            ex.id = std::to_string(i);
            ex.dataset_index = i;
            ex.original = x;
            ex.adversarial = std::move(r.adversarial);
            ex.original_label = labels[i];
            ex.adversarial_label = forward(model, ex.adversarial).predicted_class;
            ex.attack = p;
            ex.success = r.success && ex.adversarial_label != ex.original_label;
            ex.confidence_level = confidence_level(model, ex.adversarial);
            ex.l2_dist = l2_distance(ex.adversarial, ex.original);
            ex.linf_dist = linf_distance(ex.adversarial, ex.original);
            slots[k] = std::move(ex);
        });

        // consume in dataset order so results are independent of scheduling
        std::size_t consumed = 0;
        for (std::size_t k = 0; k < count && successes < n; ++k) {
            ++consumed;
            if (!slots[k]) continue;
            if (slots[k]->success) ++successes;
            set.examples.push_back(std::move(*slots[k]));
        }
        idx += consumed;
    }

    set.images_scanned = idx - start_index;
    set.end_index = idx;
    set.partial_warning = successes < n;
    return set;
}

} // namespace mlloo

#endif // MLLOO_ATTACKS_HPP
