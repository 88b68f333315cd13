#include <catch2/catch_amalgamated.hpp>

#include "mlloo/evaluation.hpp"
#include "mlloo/rng.hpp"
#include "oracles.hpp"

using namespace mlloo;
using Catch::Approx;

namespace {

std::vector<double> random_scores(Rng& rng, std::size_t n, bool ties) {
    std::vector<double> v(n);
    for (double& x : v)
        x = ties ? static_cast<double>(rng.below(5)) / 4.0 : rng.uniform(0.0, 1.0);
    return v;
}

} // namespace

TEST_CASE("roc curve endpoints and perfect separation") {
    RocCurve roc = roc_curve({0.1, 0.2}, {0.8, 0.9});
    CHECK(roc.points.front().fpr == 0.0);
    CHECK(roc.points.front().tpr == 0.0);
    CHECK(roc.points.back().fpr == 1.0);
    CHECK(roc.points.back().tpr == 1.0);
    bool hits_corner = false;
    for (const RocPoint& p : roc.points)
        if (p.fpr == 0.0 && p.tpr == 1.0) hits_corner = true;
    CHECK(hits_corner);
    CHECK(auc(roc) == 1.0);
}

TEST_CASE("identical distributions give the diagonal") {
    std::vector<double> s{0.2, 0.4, 0.4, 0.9};
    RocCurve roc = roc_curve(s, s);
    for (const RocPoint& p : roc.points) CHECK(p.fpr == Approx(p.tpr).margin(1e-15));
    CHECK(auc(roc) == Approx(0.5).margin(1e-15));
}

TEST_CASE("all scores tied gives AUC one half") {
    CHECK(auc({0.5, 0.5, 0.5}, {0.5, 0.5}) == Approx(0.5).margin(1e-15));
}

TEST_CASE("roc curves are monotone") {
    Rng rng(21);
    for (int trial = 0; trial < 60; ++trial) {
        RocCurve roc = roc_curve(random_scores(rng, 1 + rng.below(30), trial % 2 == 0),
                                 random_scores(rng, 1 + rng.below(30), trial % 2 == 0));
        for (std::size_t i = 1; i < roc.points.size(); ++i) {
            REQUIRE(roc.points[i].fpr >= roc.points[i - 1].fpr);
            REQUIRE(roc.points[i].tpr >= roc.points[i - 1].tpr);
        }
    }
}

TEST_CASE("trapezoidal auc equals the pairwise statistic") {
    Rng rng(22);
    for (int trial = 0; trial < 80; ++trial) {
        const bool ties = trial % 2 == 0;
        std::vector<double> nat = random_scores(rng, 1 + rng.below(40), ties);
        std::vector<double> adv = random_scores(rng, 1 + rng.below(40), ties);
        REQUIRE(auc(nat, adv) == Approx(oracles::auc_pairwise_ref(nat, adv)).margin(1e-9));
    }
}

TEST_CASE("auc is invariant under strictly increasing transforms") {
    Rng rng(23);
    for (int trial = 0; trial < 40; ++trial) {
        std::vector<double> nat = random_scores(rng, 2 + rng.below(20), true);
        std::vector<double> adv = random_scores(rng, 2 + rng.below(20), true);
        auto warp = [](double s) { return std::exp(3.0 * s) + s; };
        std::vector<double> nat_w = nat, adv_w = adv;
        for (double& s : nat_w) s = warp(s);
        for (double& s : adv_w) s = warp(s);
        REQUIRE(auc(nat, adv) == Approx(auc(nat_w, adv_w)).margin(1e-12));
        RocCurve a = roc_curve(nat, adv), b = roc_curve(nat_w, adv_w);
        REQUIRE(a.points.size() == b.points.size());
        for (std::size_t i = 0; i < a.points.size(); ++i) {
            REQUIRE(a.points[i].fpr == b.points[i].fpr);
            REQUIRE(a.points[i].tpr == b.points[i].tpr);
        }
    }
}

TEST_CASE("tpr_at_fpr hand-checked operating points") {
    CHECK(tpr_at_fpr({0.1, 0.2}, {0.8, 0.9}, 0.01) == 1.0);
    CHECK(tpr_at_fpr({0.1, 0.2}, {0.8, 0.9}, 0.10) == 1.0);

    // nat = 1..100 distinct, target 0.05 admits exactly 5 false positives
    std::vector<double> nat(100), adv;
    for (int i = 0; i < 100; ++i) nat[static_cast<std::size_t>(i)] = i + 1;
    for (int i = 0; i < 50; ++i) adv.push_back(93.5 + i);  // 2 below the threshold, 48 above
    ThresholdDetector det = fit_threshold(nat, adv, 0.05);
    CHECK(det.threshold == 95.0);
    std::size_t fp = 0;
    for (double s : nat) fp += s > det.threshold ? 1 : 0;
    CHECK(fp == 5);
    CHECK(tpr_at_fpr(nat, adv, 0.05) == Approx(48.0 / 50.0));

    // target 0: fraction of adv strictly above max(nat)
    std::vector<double> nat2{1, 2, 3, 4}, adv2{3.5, 4.5, 5.0};
    CHECK(tpr_at_fpr(nat2, adv2, 0.0) == Approx(2.0 / 3.0));
}

TEST_CASE("tpr_at_fpr is non-decreasing in the target") {
    Rng rng(24);
    for (int trial = 0; trial < 40; ++trial) {
        std::vector<double> nat = random_scores(rng, 5 + rng.below(40), trial % 2 == 0);
        std::vector<double> adv = random_scores(rng, 5 + rng.below(40), trial % 2 == 0);
        double prev = -1.0;
        for (double target : {0.0, 0.01, 0.05, 0.1, 0.3, 1.0}) {
            const double t = tpr_at_fpr(nat, adv, target);
            REQUIRE(t >= prev);
            prev = t;
        }
    }
}
