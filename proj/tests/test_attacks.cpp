#include <catch2/catch_amalgamated.hpp>

#include "mlloo/attacks.hpp"
#include "mlloo/net.hpp"
#include "mlloo/rng.hpp"

using namespace mlloo;
using Catch::Approx;

namespace {

Model linear_model(const Tensor& w) {
    return Model({w.extent(1)}, {Layer::dense(w, Tensor({w.extent(0)})), Layer::softmax()});
}

Model random_mlp(Rng& rng, std::size_t in, std::size_t hidden, std::size_t classes) {
    Tensor w1({hidden, in}), b1({hidden}), w2({classes, hidden}), b2({classes});
    for (double& v : w1.values()) v = rng.uniform(-0.9, 0.9);
    for (double& v : b1.values()) v = rng.uniform(-0.2, 0.2);
    for (double& v : w2.values()) v = rng.uniform(-0.9, 0.9);
    for (double& v : b2.values()) v = rng.uniform(-0.2, 0.2);
    return Model({in}, {Layer::dense(std::move(w1), std::move(b1)), Layer::relu(),
                        Layer::dense(std::move(w2), std::move(b2)), Layer::softmax()});
}

// two-class model deciding by feature 0 against the plane x0 = 0.5
Model plane_model(double sharpness = 8.0) {
    Tensor w({2, 4});
    w.at(0, 0) = sharpness;
    Tensor b({2});
    b[0] = -sharpness * 0.5;
    return Model({4}, {Layer::dense(std::move(w), std::move(b)), Layer::softmax()});
}

} // namespace

TEST_CASE("fgsm with zero epsilon returns the input") {
    Rng rng(1);
    Model m = random_mlp(rng, 5, 4, 3);
    Tensor x({5}, {0.2, 0.4, 0.6, 0.8, 0.5});
    Tensor adv = fgsm(m, x, forward(m, x).predicted_class, 0.0);
    CHECK(adv.values() == x.values());
}

TEST_CASE("fgsm perturbs along the analytic gradient sign for a linear model") {
    Rng rng(2);
    Tensor w({3, 6});
    for (double& v : w.values()) v = rng.uniform(-1, 1);
    Model m = linear_model(w);
    Tensor x({6});
    for (double& v : x.values()) v = rng.uniform(0.3, 0.7);

    const int y = forward(m, x).predicted_class;
    LayerActivations acts = forward(m, x);
    const double eps = 0.05;
    Tensor adv = fgsm(m, x, y, eps);
    for (std::size_t i = 0; i < x.size(); ++i) {
        double g = 0.0;
        for (std::size_t j = 0; j < 3; ++j)
            g += w.at(j, i) * (acts.probs[j] - (static_cast<int>(j) == y ? 1.0 : 0.0));
        const double want = g > 0 ? eps : (g < 0 ? -eps : 0.0);
        REQUIRE(adv[i] - x[i] == Approx(want).margin(1e-12));
    }
    CHECK(linf_distance(adv, x) <= eps + 1e-12);
    for (double v : adv.values()) REQUIRE((v >= 0.0 && v <= 1.0));
}

TEST_CASE("pgd with zero steps returns the input") {
    Rng rng(3);
    Model m = random_mlp(rng, 4, 4, 2);
    Tensor x({4}, {0.1, 0.9, 0.4, 0.6});
    CHECK(linf_pgd(m, x, 0, 0.1, 0.01, 0).values() == x.values());
}

TEST_CASE("one pgd step equals fgsm at the clipped step size") {
    Rng rng(4);
    for (int trial = 0; trial < 10; ++trial) {
        Model m = random_mlp(rng, 5, 6, 3);
        Tensor x({5});
        for (double& v : x.values()) v = rng.uniform(0.05, 0.95);
        const int y = forward(m, x).predicted_class;
        const double eps = rng.uniform(0.01, 0.2), alpha = rng.uniform(0.01, 0.3);
        Tensor pgd1 = linf_pgd(m, x, y, eps, alpha, 1);
        Tensor f = fgsm(m, x, y, std::min(alpha, eps));
        REQUIRE(pgd1.values() == f.values());
    }
}

TEST_CASE("pgd respects the epsilon ball and the pixel box") {
    Rng rng(5);
    Model m = random_mlp(rng, 6, 8, 3);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor x({6});
        for (double& v : x.values()) v = rng.uniform(0, 1);
        const double eps = rng.uniform(0.01, 0.3);
        Tensor adv = linf_pgd(m, x, forward(m, x).predicted_class, eps, eps / 4, 20);
        REQUIRE(linf_distance(adv, x) <= eps + 1e-12);
        for (double v : adv.values()) REQUIRE((v >= 0.0 && v <= 1.0));
    }
}

TEST_CASE("cw succeeds with the required margin on an easy model") {
    Model m = plane_model();
    Tensor x({4}, {0.8, 0.3, 0.6, 0.2});  // class 0 with margin 8*(0.3) = 2.4
    REQUIRE(forward(m, x).predicted_class == 0);

    AttackParams p;
    p.kind = AttackKind::CWL2;
    p.confidence = 0.5;
    p.max_iters = 300;
    p.search_steps = 4;
    AttackResult r = cw_l2(m, x, p, 0);
    REQUIRE(r.success);
    LayerActivations acts = forward(m, r.adversarial);
    CHECK(acts.predicted_class != 0);
    CHECK(acts.logits[1] - acts.logits[0] >= p.confidence - 1e-9);
    for (double v : r.adversarial.values()) REQUIRE((v >= 0.0 && v <= 1.0));
    // the attack only needs to move feature 0 below the plane
    CHECK(l2_distance(r.adversarial, x) < 0.6);
}

TEST_CASE("higher confidence targets yield higher confidence levels") {
    Model m = plane_model();
    Tensor x({4}, {0.75, 0.4, 0.5, 0.6});
    AttackParams lo, hi;
    lo.kind = hi.kind = AttackKind::CWL2;
    lo.confidence = 0.0;
    hi.confidence = 3.0;
    lo.max_iters = hi.max_iters = 300;
    lo.search_steps = hi.search_steps = 4;
    AttackResult a = cw_l2(m, x, lo, 0);
    AttackResult b = cw_l2(m, x, hi, 0);
    REQUIRE(a.success);
    REQUIRE(b.success);
    CHECK(confidence_level(m, b.adversarial) >= confidence_level(m, a.adversarial));
}

TEST_CASE("cw returns an already-misclassified input nearly unchanged") {
    Model m = plane_model();
    Tensor x({4}, {0.2, 0.5, 0.5, 0.5});  // predicted class 1
    REQUIRE(forward(m, x).predicted_class == 1);
    AttackParams p;
    p.kind = AttackKind::CWL2;
    p.confidence = 0.0;
    p.max_iters = 50;
    p.search_steps = 2;
    // label 0 says the model is already wrong about this input
    AttackResult r = cw_l2(m, x, p, 0);
    REQUIRE(r.success);
    CHECK(l2_distance(r.adversarial, x) <= 1e-6);
}

TEST_CASE("deepfool lands on the analytic boundary projection of a linear model") {
    // logits: z0 = w.x + b, z1 = 0; boundary at w.x + b = 0
    Tensor w({2, 3});
    w.at(0, 0) = 2.0;
    w.at(0, 1) = -1.0;
    w.at(0, 2) = 0.5;
    Tensor b({2});
    b[0] = -0.8;
    Model m({3}, {Layer::dense(w, b), Layer::softmax()});

    Tensor x({3}, {0.7, 0.2, 0.4});
    const double fx = 2.0 * 0.7 - 1.0 * 0.2 + 0.5 * 0.4 - 0.8;  // 0.6, class 0
    REQUIRE(forward(m, x).predicted_class == 0);
    const double wnorm2 = 2.0 * 2.0 + 1.0 + 0.25;

    SECTION("overshoot zero reaches the hyperplane") {
        AttackResult r = deepfool(m, x, 0.0, 1);
        // one linearization step on a linear model is exact
        LayerActivations acts = forward(m, r.adversarial);
        CHECK(std::abs(acts.logits[0] - acts.logits[1]) <= 1e-9);
        const double dist = l2_distance(r.adversarial, x);
        CHECK(dist == Approx(std::abs(fx) / std::sqrt(wnorm2)).margin(1e-9));
    }

    SECTION("overshoot pushes past the boundary and flips the label") {
        AttackResult r = deepfool(m, x, 0.05, 10);
        REQUIRE(r.success);
        CHECK(forward(m, r.adversarial).predicted_class == 1);
        const double dist = l2_distance(r.adversarial, x);
        CHECK(dist == Approx(1.05 * std::abs(fx) / std::sqrt(wnorm2)).margin(1e-9));
    }
}

TEST_CASE("deepfool success implies a label change") {
    Rng rng(6);
    for (int trial = 0; trial < 8; ++trial) {
        Model m = random_mlp(rng, 6, 8, 4);
        Tensor x({6});
        for (double& v : x.values()) v = rng.uniform(0.1, 0.9);
        const int pred = forward(m, x).predicted_class;
        AttackResult r = deepfool(m, x, 0.02, 50);
        if (r.success) REQUIRE(forward(m, r.adversarial).predicted_class != pred);
        for (double v : r.adversarial.values()) REQUIRE((v >= 0.0 && v <= 1.0));
    }
}

TEST_CASE("jsma picks the brute-force best saliency pair first") {
    Rng rng(7);
    Tensor w({4, 8});
    for (double& v : w.values()) v = rng.uniform(-1, 1);
    Model m = linear_model(w);
    Tensor x({8});
    for (double& v : x.values()) v = rng.uniform(0.2, 0.8);
    const int pred = forward(m, x).predicted_class;
    const std::size_t target = static_cast<std::size_t>((pred + 1) % 4);

    // budget of exactly one pair isolates the first greedy choice
    AttackResult r = jsma(m, x, static_cast<int>(target), 1.0, 2.4 / 8.0);
    std::vector<std::size_t> changed;
    for (std::size_t i = 0; i < 8; ++i)
        if (r.adversarial[i] != x[i]) changed.push_back(i);
    REQUIRE(changed.size() == 2);

    double best = 0.0;
    std::size_t bp = 8, bq = 8;
    for (std::size_t pfeat = 0; pfeat < 8; ++pfeat)
        for (std::size_t q = pfeat + 1; q < 8; ++q) {
            double a = w.at(target, pfeat) + w.at(target, q);
            double bsum = 0.0;
            for (std::size_t j = 0; j < 4; ++j)
                if (j != target) bsum += w.at(j, pfeat) + w.at(j, q);
            if (a <= 0.0 || bsum >= 0.0) continue;
            if (-a * bsum > best) {
                best = -a * bsum;
                bp = pfeat;
                bq = q;
            }
        }
    REQUIRE(bp != 8);
    CHECK(changed[0] == bp);
    CHECK(changed[1] == bq);
    CHECK(r.adversarial[bp] == 1.0);  // theta = 1 saturates
}

TEST_CASE("jsma degenerate budget fails immediately") {
    Rng rng(8);
    Model m = random_mlp(rng, 10, 4, 3);
    Tensor x({10}, 0.5);
    AttackResult r = jsma(m, x, -1, 1.0, 0.1);  // gamma*d = 1 < 2
    CHECK_FALSE(r.success);
    CHECK(r.adversarial.values() == x.values());
}

TEST_CASE("jsma respects the L0 budget") {
    Rng rng(9);
    for (int trial = 0; trial < 6; ++trial) {
        Model m = random_mlp(rng, 12, 10, 4);
        Tensor x({12});
        for (double& v : x.values()) v = rng.uniform(0.1, 0.7);
        const double gamma = 0.34;
        AttackResult r = jsma(m, x, -1, 1.0, gamma);
        std::size_t l0 = 0;
        for (std::size_t i = 0; i < x.size(); ++i) l0 += r.adversarial[i] != x[i] ? 1 : 0;
        REQUIRE(l0 <= static_cast<std::size_t>(gamma * 12.0));
    }
}

TEST_CASE("boundary attack stays decision-only and improves monotonically") {
    Model m = plane_model(12.0);
    Tensor x({4}, {0.9, 0.5, 0.5, 0.5});
    REQUIRE(forward(m, x).predicted_class == 0);

    reset_counters(m);
    AttackResult r = boundary_attack(m, x, 77, 600);
    REQUIRE(r.success);
    CHECK(count_gradient_calls(m) == 0);  // purity: decisions only

    for (std::size_t i = 1; i < r.best_l2_trace.size(); ++i)
        REQUIRE(r.best_l2_trace[i] <= r.best_l2_trace[i - 1]);

    CHECK(forward(m, r.adversarial).predicted_class == 1);
    // the optimum sits on the x0 = 0.5 plane directly below x
    CHECK(r.adversarial[0] == Approx(0.5).margin(0.05));
    CHECK(l2_distance(r.adversarial, x) < 0.48);
}

TEST_CASE("confidence level statistic") {
    Tensor w({2, 2});
    Model m = linear_model(w);  // uniform probabilities
    Tensor x({2}, {0.5, 0.5});
    CHECK(confidence_level(m, x) == Approx(std::log(2.0)).margin(1e-12));
    CHECK(confidence_level_from_prob(0.9) == Approx(2.302585092994046).margin(1e-12));
    CHECK(confidence_level_from_prob(1.0) == Approx(-std::log(1e-12)).margin(1e-9));
}

TEST_CASE("generate_attack_set invariants and determinism") {
    Rng rng(10);
    Model m = random_mlp(rng, 6, 10, 3);
    std::vector<Tensor> images;
    std::vector<int> labels;
    for (int i = 0; i < 60; ++i) {
        Tensor x({6});
        for (double& v : x.values()) v = rng.uniform(0, 1);
        labels.push_back(forward(m, x).predicted_class);  // force correct classification
        images.push_back(std::move(x));
    }
    // corrupt a few labels so the skip path is exercised
    labels[3] = (labels[3] + 1) % 3;
    labels[10] = (labels[10] + 1) % 3;

    AttackParams p;
    p.kind = AttackKind::FGSM;
    p.epsilon = 0.4;
    p.seed = 5;

    AttackSet a = generate_attack_set(m, images, labels, p, 10, 0, 1);
    AttackSet b = generate_attack_set(m, images, labels, p, 10, 0, 2);
    REQUIRE(a.examples.size() == b.examples.size());
    for (std::size_t i = 0; i < a.examples.size(); ++i) {
        REQUIRE(a.examples[i].adversarial.values() == b.examples[i].adversarial.values());
        REQUIRE(a.examples[i].success == b.examples[i].success);
    }
    CHECK(a.success_count() == 10);

    for (const PairedExample& ex : a.examples) {
        if (ex.success) REQUIRE(ex.adversarial_label != ex.original_label);
        REQUIRE(std::abs(l2_distance(ex.adversarial, ex.original) - ex.l2_dist) <= 1e-9);
        REQUIRE(std::abs(linf_distance(ex.adversarial, ex.original) - ex.linf_dist) <= 1e-9);
        for (double v : ex.adversarial.values()) REQUIRE((v >= 0.0 && v <= 1.0));
        REQUIRE(ex.dataset_index != 3);
        REQUIRE(ex.dataset_index != 10);
    }

    // exhaustion produces a partial set with the warning flag
    AttackSet partial = generate_attack_set(m, images, labels, p, 100000, 0, 2);
    CHECK(partial.partial_warning);
    CHECK(partial.end_index == images.size());
}

TEST_CASE("mixed-confidence draws come from the declared grid") {
    Rng rng(11);
    Model m = random_mlp(rng, 6, 8, 3);
    std::vector<Tensor> images;
    std::vector<int> labels;
    for (int i = 0; i < 30; ++i) {
        Tensor x({6});
        for (double& v : x.values()) v = rng.uniform(0, 1);
        labels.push_back(forward(m, x).predicted_class);
        images.push_back(std::move(x));
    }
    AttackParams p;
    p.kind = AttackKind::LinfPGD;
    p.epsilon = 0.1;
    p.steps = 5;
    p.mix = MixMode::EpsilonGrid;
    p.seed = 9;
    AttackSet set = generate_attack_set(m, images, labels, p, 8, 0, 2);
    std::size_t distinct = 0;
    std::vector<double> seen;
    for (const PairedExample& ex : set.examples) {
        const double eps = ex.attack.epsilon;
        bool in_grid = false;
        for (double g : p.epsilon_grid) in_grid |= g == eps;
        REQUIRE(in_grid);
        REQUIRE(ex.linf_dist <= eps + 1e-12);
        if (std::find(seen.begin(), seen.end(), eps) == seen.end()) {
            seen.push_back(eps);
            ++distinct;
        }
    }
    CHECK(distinct >= 2);  // the grid is actually being sampled
}
