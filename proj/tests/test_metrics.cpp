// test_metrics.cpp
// AUC against quadratic pair counting (the definition), direct formulas for
// accuracy and RMSE, Spearman on known rankings.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "tsdr/metrics.hpp"
#include "tsdr/rng.hpp"

using namespace tsdr;

namespace {

// the Mann-Whitney definition, O(n^2): ties between classes count half
double auc_pairs(const std::vector<int>& labels, const std::vector<double>& scores) {
    double wins = 0.0;
    std::size_t n_pairs = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 1) continue;
        for (std::size_t j = 0; j < labels.size(); ++j) {
            if (labels[j] != 0) continue;
            ++n_pairs;
            if (scores[i] > scores[j]) wins += 1.0;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    return wins / static_cast<double>(n_pairs);
}

} // namespace

TEST_CASE("auc equals pair counting on random batches with heavy ties") {
    rng::Rng rng(404);
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t n = 2 + rng.below(120);
        std::vector<int> labels(n);
        std::vector<double> scores(n);
        bool has0 = false, has1 = false;
        for (std::size_t i = 0; i < n; ++i) {
            labels[i] = rng.bernoulli(0.4) ? 1 : 0;
            // quantized scores force plenty of exact ties
            scores[i] = static_cast<double>(rng.below(8)) / 8.0;
            (labels[i] ? has1 : has0) = true;
        }
        if (!has0 || !has1) {
            labels[0] = 0;
            labels[n - 1] = 1;
        }
        CAPTURE(rep);
        CHECK(metrics::auc(labels, scores) == auc_pairs(labels, scores));
    }
}

TEST_CASE("auc on separable and anti-separable data") {
    std::vector<int> labels{0, 0, 1, 1};
    CHECK(metrics::auc(labels, {0.1, 0.2, 0.8, 0.9}) == 1.0);
    CHECK(metrics::auc(labels, {0.9, 0.8, 0.1, 0.2}) == 0.0);
    CHECK(metrics::auc(labels, {0.5, 0.5, 0.5, 0.5}) == 0.5);
}

TEST_CASE("accuracy thresholds at 0.5, ties count as positive") {
    const std::vector<int> labels{1, 0, 1};
    const std::vector<double> scores{0.6, 0.6, 0.4};
    // 0.6 -> 1 (hit), 0.6 -> 1 (miss), 0.4 -> 0 (miss)
    CHECK(metrics::accuracy(labels, scores) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(metrics::accuracy({1}, {0.5}) == 1.0);
}

TEST_CASE("rmse matches the direct formula to 1e-12") {
    rng::Rng rng(405);
    std::vector<int> labels;
    std::vector<double> scores;
    for (int i = 0; i < 257; ++i) {
        labels.push_back(rng.bernoulli(0.5) ? 1 : 0);
        scores.push_back(rng.uniform01());
    }
    double ss = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double d = scores[i] - labels[i];
        ss += d * d;
    }
    const double want = std::sqrt(ss / static_cast<double>(labels.size()));
    CHECK(std::fabs(metrics::rmse(labels, scores) - want) < 1e-12);
}

TEST_CASE("degenerate inputs throw") {
    CHECK_THROWS_AS(metrics::auc({1, 1}, {0.1, 0.2}), std::invalid_argument);
    CHECK_THROWS_AS(metrics::auc({0, 0}, {0.1, 0.2}), std::invalid_argument);
    CHECK_THROWS_AS(metrics::auc({}, {}), std::invalid_argument);
    CHECK_THROWS_AS(metrics::auc({1, 0}, {0.1}), std::invalid_argument);
    CHECK_THROWS_AS(metrics::accuracy({1, 2}, {0.1, 0.2}), std::invalid_argument);
}

TEST_CASE("spearman recovers monotone relations and handles ties") {
    CHECK(metrics::spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
    CHECK(metrics::spearman({1, 2, 3, 4}, {9, 7, 5, 3}) == doctest::Approx(-1.0));
    // any strictly increasing map of the same order keeps rho = 1
    CHECK(metrics::spearman({1, 2, 3, 4}, {1, 100, 101, 1000}) == doctest::Approx(1.0));
    // constant side: correlation undefined, reported as 0
    CHECK(metrics::spearman({1, 2, 3}, {5, 5, 5}) == 0.0);
    // tied pair gets the average rank; hand value for {1,2,2,3} vs {1,2,3,4}:
    // ranks x = {1, 2.5, 2.5, 4}, ranks y = {1,2,3,4}
    const double got = metrics::spearman({1, 2, 2, 3}, {1, 2, 3, 4});
    const double mx = 2.5, my = 2.5;
    const std::vector<double> rx{1, 2.5, 2.5, 4}, ry{1, 2, 3, 4};
    double num = 0, dx = 0, dy = 0;
    for (int i = 0; i < 4; ++i) {
        num += (rx[i] - mx) * (ry[i] - my);
        dx += (rx[i] - mx) * (rx[i] - mx);
        dy += (ry[i] - my) * (ry[i] - my);
    }
    CHECK(got == doctest::Approx(num / std::sqrt(dx * dy)).epsilon(1e-12));
    CHECK_THROWS_AS(metrics::spearman({1}, {2}), std::invalid_argument);
    CHECK_THROWS_AS(metrics::spearman({1, 2}, {2}), std::invalid_argument);
}
