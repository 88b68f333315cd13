#include <catch2/catch_amalgamated.hpp>

#include "mlloo/io.hpp"
#include "mlloo/net.hpp"
#include "mlloo/rng.hpp"
#include "oracles.hpp"

using namespace mlloo;
using Catch::Approx;

namespace {

Model identity_dense_model(std::size_t n) {
    Tensor w({n, n});
    for (std::size_t i = 0; i < n; ++i) w.at(i, i) = 1.0;
    return Model({n}, {Layer::dense(std::move(w), Tensor({n})), Layer::softmax()});
}

Model linear_model(const Tensor& w) {
    return Model({w.extent(1)}, {Layer::dense(w, Tensor({w.extent(0)})), Layer::softmax()});
}

Model random_mlp(Rng& rng, std::size_t in, std::size_t hidden, std::size_t classes) {
    Tensor w1({hidden, in}), b1({hidden}), w2({classes, hidden}), b2({classes});
    for (double& v : w1.values()) v = rng.uniform(-0.8, 0.8);
    for (double& v : b1.values()) v = rng.uniform(-0.2, 0.2);
    for (double& v : w2.values()) v = rng.uniform(-0.8, 0.8);
    for (double& v : b2.values()) v = rng.uniform(-0.2, 0.2);
    return Model({in}, {Layer::dense(std::move(w1), std::move(b1)), Layer::relu(),
                        Layer::dense(std::move(w2), std::move(b2)), Layer::softmax()});
}

Model random_small_cnn(Rng& rng) {
    Tensor k({3, 3, 1, 4}), kb({4}), w({3, 2 * 2 * 4}), b({3});
    for (double& v : k.values()) v = rng.uniform(-0.7, 0.7);
    for (double& v : kb.values()) v = rng.uniform(-0.1, 0.1);
    for (double& v : w.values()) v = rng.uniform(-0.6, 0.6);
    for (double& v : b.values()) v = rng.uniform(-0.1, 0.1);
    return Model({4, 4, 1},
                 {Layer::conv(std::move(k), std::move(kb), 1, Padding::Same), Layer::relu(),
                  Layer::maxpool(), Layer::flatten(), Layer::dense(std::move(w), std::move(b)),
                  Layer::softmax()});
}

} // namespace

TEST_CASE("forward on the identity dense model") {
    Model m = identity_dense_model(2);
    Tensor x({2}, {2.0, 1.0});
    LayerActivations acts = forward(m, x);
    CHECK(acts.logits.values() == std::vector<double>{2.0, 1.0});
    CHECK(acts.probs[0] == Approx(0.7310585786300049).margin(1e-12));
    CHECK(acts.probs[1] == Approx(0.2689414213699951).margin(1e-12));
    CHECK(acts.predicted_class == 0);
    CHECK(acts.per_layer.size() == m.layers().size());
}

TEST_CASE("zero-weight model yields uniform probabilities") {
    Tensor w({5, 3});
    Model m = linear_model(w);
    Tensor x({3}, {0.3, 0.5, 0.9});
    LayerActivations acts = forward(m, x);
    for (std::size_t i = 0; i < 5; ++i) CHECK(acts.probs[i] == Approx(0.2).margin(1e-15));
    CHECK(acts.predicted_class == 0);  // ties break toward the lowest index
}

TEST_CASE("forward is deterministic") {
    Rng rng(1);
    Model m = random_small_cnn(rng);
    Tensor x({4, 4, 1});
    for (double& v : x.values()) v = rng.uniform(0, 1);
    LayerActivations a = forward(m, x), b = forward(m, x);
    for (std::size_t li = 0; li < a.per_layer.size(); ++li)
        REQUIRE(a.per_layer[li].values() == b.per_layer[li].values());
}

TEST_CASE("model construction rejects inconsistent shapes") {
    Tensor w({4, 7});
    CHECK_THROWS_AS(Model({6}, {Layer::dense(w, Tensor({4})), Layer::softmax()}),
                    std::invalid_argument);
    CHECK_THROWS_AS(Model({7}, {Layer::dense(w, Tensor({3})), Layer::softmax()}),
                    std::invalid_argument);
    // softmax must be last and follow a dense layer
    CHECK_THROWS_AS(Model({7}, {Layer::softmax()}), std::invalid_argument);
    CHECK_THROWS_AS(Model({7}, {Layer::dense(w, Tensor({4}))}), std::invalid_argument);
    // odd extents cannot be pooled
    Tensor k({3, 3, 1, 2});
    CHECK_THROWS_AS(Model({5, 5, 1}, {Layer::conv(k, Tensor({2}), 1, Padding::Same),
                                      Layer::maxpool(), Layer::flatten(),
                                      Layer::dense(Tensor({2, 12}), Tensor({2})),
                                      Layer::softmax()}),
                    std::invalid_argument);
}

TEST_CASE("input gradient of a linear model is analytic") {
    Rng rng(2);
    Tensor w({4, 6});
    for (double& v : w.values()) v = rng.uniform(-1, 1);
    Model m = linear_model(w);
    Tensor x({6});
    for (double& v : x.values()) v = rng.uniform(0, 1);

    const int y = 2;
    LayerActivations acts = forward(m, x);
    Tensor g = input_gradient(m, x, LossSpec::cross_entropy(y));
    for (std::size_t i = 0; i < 6; ++i) {
        double want = 0.0;
        for (std::size_t j = 0; j < 4; ++j)
            want += w.at(j, i) * (acts.probs[j] - (j == static_cast<std::size_t>(y) ? 1.0 : 0.0));
        REQUIRE(g[i] == Approx(want).margin(1e-12));
    }
}

TEST_CASE("gradient vanishes for a constant model") {
    Tensor w({3, 5});
    Model m = linear_model(w);  // logits are constant zero
    Tensor x({5}, {0.1, 0.2, 0.3, 0.4, 0.5});
    Tensor g = input_gradient(m, x, LossSpec::cross_entropy(1));
    for (double v : g.values()) CHECK(v == 0.0);
}

TEST_CASE("backprop matches central finite differences") {
    Rng rng(3);
    int checked = 0;
    for (int trial = 0; trial < 12 && checked < 6; ++trial) {
        Model m = trial % 2 ? random_mlp(rng, 8, 7, 4) : random_small_cnn(rng);
        Tensor x(m.input_shape());
        for (double& v : x.values()) v = rng.uniform(0.05, 0.95);
        if (!oracles::away_from_kinks(m, x, 1e-6)) continue;
        const LossSpec loss = trial % 3 == 0
                                  ? LossSpec::logit_margin(0, -1, 1.0)
                                  : LossSpec::cross_entropy(static_cast<int>(rng.below(3)));
        if (loss.kind == LossSpec::Kind::LogitMargin) {
            // stay away from the hinge of the margin loss as well
            LayerActivations a0 = forward(m, x);
            double best_other = -1e300;
            for (std::size_t j = 1; j < a0.logits.size(); ++j)
                best_other = std::max(best_other, a0.logits[j]);
            if (std::abs(a0.logits[0] - best_other + loss.offset) < 1e-3) continue;
        }
        ++checked;
        Tensor g = input_gradient(m, x, loss);
        Tensor fd = oracles::finite_difference_gradient(
            x, [&](const Tensor& p) { return evaluate_loss(forward(m, p), loss).value; }, 1e-5);
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            num += (g[i] - fd[i]) * (g[i] - fd[i]);
            den += fd[i] * fd[i];
        }
        REQUIRE(std::sqrt(num) <= 1e-4 * std::max(std::sqrt(den), 1e-12));
    }
    REQUIRE(checked >= 5);
}

TEST_CASE("logit jacobian of a linear model is the weight matrix") {
    Rng rng(4);
    Tensor w({3, 5});
    for (double& v : w.values()) v = rng.uniform(-1, 1);
    Model m = linear_model(w);
    Tensor x({5});
    for (double& v : x.values()) v = rng.uniform(0, 1);
    Tensor jac = logit_jacobian(m, x);
    REQUIRE(jac.shape() == std::vector<std::size_t>{3, 5});
    for (std::size_t i = 0; i < jac.size(); ++i) CHECK(jac[i] == w[i]);
}

TEST_CASE("jacobian rows are consistent with margin-loss gradients") {
    Rng rng(5);
    Model m = random_mlp(rng, 6, 5, 4);
    Tensor x({6});
    for (double& v : x.values()) v = rng.uniform(0, 1);
    Tensor jac = logit_jacobian(m, x);
    // an always-active margin loss differentiates to row(src) - row(tgt)
    Tensor g = input_gradient(m, x, LossSpec::logit_margin(1, 3, 1e6));
    for (std::size_t i = 0; i < 6; ++i)
        REQUIRE(g[i] == Approx(jac.at(1, i) - jac.at(3, i)).margin(1e-12));
}

TEST_CASE("jacobian rows match finite differences") {
    Rng rng(6);
    Model m = random_small_cnn(rng);
    Tensor x(m.input_shape());
    for (int attempt = 0; attempt < 20; ++attempt) {
        for (double& v : x.values()) v = rng.uniform(0.05, 0.95);
        if (oracles::away_from_kinks(m, x, 1e-6)) break;
    }
    REQUIRE(oracles::away_from_kinks(m, x, 1e-6));
    Tensor jac = logit_jacobian(m, x);
    for (std::size_t j = 0; j < 3; ++j) {
        Tensor fd = oracles::finite_difference_gradient(
            x, [&](const Tensor& p) { return forward(m, p).logits[j]; }, 1e-5);
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < fd.size(); ++i) {
            const double diff = jac.at(j, i) - fd[i];
            num += diff * diff;
            den += fd[i] * fd[i];
        }
        REQUIRE(std::sqrt(num) <= 1e-4 * std::max(std::sqrt(den), 1e-12));
    }
}

TEST_CASE("training separates labeled blobs") {
    Rng rng(7);
    std::vector<Tensor> xs;
    std::vector<int> ys;
    for (int i = 0; i < 120; ++i) {
        const int cls = i % 2;
        Tensor x({2});
        x[0] = (cls ? 0.75 : 0.25) + 0.08 * rng.normal();
        x[1] = (cls ? 0.25 : 0.75) + 0.08 * rng.normal();
        xs.push_back(clip(x, 0.0, 1.0));
        ys.push_back(cls);
    }
    ArchConfig arch;
    arch.name = "tiny_mlp";
    arch.input_h = 1;
    arch.input_w = 1;
    arch.input_c = 2;
    arch.num_classes = 2;
    arch.hidden_units = 8;
    // tiny_mlp flattens, so feed the blobs as flat rank-3 tensors
    std::vector<Tensor> xs3;
    for (const Tensor& x : xs) xs3.push_back(x.reshaped({1, 1, 2}));

    TrainHyperparams hp{0.5, 16, 60, 9};
    TrainResult tr = train_classifier(xs3, ys, arch, hp);
    CHECK(tr.log.size() == 60);
    CHECK(classification_accuracy(tr.model, xs3, ys) >= 0.99);
}

TEST_CASE("zero epochs returns the freshly initialized model") {
    ArchConfig arch;
    arch.name = "tiny_mlp";
    arch.input_h = 1;
    arch.input_w = 1;
    arch.input_c = 4;
    arch.num_classes = 3;
    arch.hidden_units = 5;
    std::vector<Tensor> xs{Tensor({1, 1, 4}, {0.1, 0.2, 0.3, 0.4})};
    std::vector<int> ys{1};
    TrainHyperparams hp{0.1, 4, 0, 21};
    TrainResult tr = train_classifier(xs, ys, arch, hp);
    CHECK(tr.log.empty());
    CHECK(model_hash(tr.model) == model_hash(build_model(arch, hp.seed)));
}

TEST_CASE("training errors") {
    ArchConfig arch;
    arch.name = "tiny_mlp";
    arch.input_h = 1;
    arch.input_w = 1;
    arch.input_c = 2;
    arch.num_classes = 2;
    TrainHyperparams hp;
    CHECK_THROWS_AS(train_classifier({}, {}, arch, hp), std::invalid_argument);
    std::vector<Tensor> xs{Tensor({1, 1, 2}, {0.5, 0.5})};
    CHECK_THROWS_AS(train_classifier(xs, {7}, arch, hp), std::invalid_argument);
    // a divergent learning rate aborts instead of producing non-finite nets
    std::vector<Tensor> many;
    std::vector<int> labels;
    Rng rng(8);
    for (int i = 0; i < 32; ++i) {
        many.push_back(Tensor({1, 1, 2}, {rng.uniform(0, 1), rng.uniform(0, 1)}));
        labels.push_back(i % 2);
    }
    TrainHyperparams wild{1e300, 8, 2, 3};
    CHECK_THROWS(train_classifier(many, labels, arch, wild));
}

TEST_CASE("forward-pass counters") {
    Rng rng(9);
    Model m = random_mlp(rng, 4, 3, 2);
    reset_counters(m);
    CHECK(count_forward_passes(m) == 0);
    Tensor x({4}, {0.1, 0.2, 0.3, 0.4});
    forward(m, x);
    CHECK(count_forward_passes(m) == 1);
    input_gradient(m, x, LossSpec::cross_entropy(0));
    CHECK(count_forward_passes(m) == 2);
    CHECK(count_gradient_calls(m) == 1);
    reset_counters(m);
    CHECK(count_forward_passes(m) == 0);
    CHECK(count_gradient_calls(m) == 0);
}
