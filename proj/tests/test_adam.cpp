// test_adam.cpp
// Adam update against hand-computed values; bias correction across steps;
// the gradient hygiene contract.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "tsdr/adam.hpp"

using namespace tsdr;

TEST_CASE("first step moves by lr * g / (|g| + eps)") {
    // after bias correction the first step reduces to that closed form
    ad::ParamStore ps;
    ps.add("w", Matrix(1, 1, std::vector<double>{1.0}));
    ad::Adam opt(ps);

    Matrix g(1, 1, std::vector<double>{2.0});
    opt.step(ps, {&g}, 0.1);

    const double want = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
    CHECK(ps[0].data[0] == doctest::Approx(want).epsilon(1e-12));
    CHECK(opt.steps_taken() == 1);
}

TEST_CASE("two constant-gradient steps match the recurrence by hand") {
    ad::ParamStore ps;
    ps.add("w", Matrix(1, 1, std::vector<double>{0.0}));
    ad::AdamConfig cfg;
    ad::Adam opt(ps, cfg);
    Matrix g(1, 1, std::vector<double>{3.0});

    double m = 0.0, v = 0.0, w = 0.0;
    const double lr = 0.01;
    for (int t = 1; t <= 2; ++t) {
        m = cfg.beta1 * m + (1 - cfg.beta1) * 3.0;
        v = cfg.beta2 * v + (1 - cfg.beta2) * 9.0;
        const double mhat = m / (1 - std::pow(cfg.beta1, t));
        const double vhat = v / (1 - std::pow(cfg.beta2, t));
        w -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
        opt.step(ps, {&g}, lr);
        CHECK(ps[0].data[0] == doctest::Approx(w).epsilon(1e-12));
    }
}

TEST_CASE("empty gradient matrix means zero gradient, moments still decay") {
    ad::ParamStore ps;
    ps.add("a", Matrix(1, 1, std::vector<double>{1.0}));
    ad::Adam opt(ps);

    Matrix g(1, 1, std::vector<double>{1.0});
    opt.step(ps, {&g}, 0.1);
    const double after_one = ps[0].data[0];

    // zero-gradient step: momentum keeps pushing, so the value still moves
    Matrix empty;
    opt.step(ps, {&empty}, 0.1);
    CHECK(ps[0].data[0] != after_one);
    CHECK(opt.steps_taken() == 2);

    // a null pointer behaves the same as an empty matrix
    ad::ParamStore ps2;
    ps2.add("a", Matrix(1, 1, std::vector<double>{1.0}));
    ad::Adam opt2(ps2);
    opt2.step(ps2, {&g}, 0.1);
    opt2.step(ps2, {nullptr}, 0.1);
    CHECK(ps2[0].data[0] == doctest::Approx(ps[0].data[0]).epsilon(1e-15));
}

TEST_CASE("non-finite gradients are a hard error naming the parameter") {
    ad::ParamStore ps;
    ps.add("weights", Matrix(1, 2, std::vector<double>{0.0, 0.0}));
    ad::Adam opt(ps);
    Matrix g(1, 2, std::vector<double>{1.0, std::numeric_limits<double>::quiet_NaN()});
    try {
        opt.step(ps, {&g}, 0.1);
        FAIL("expected a throw");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("weights") != std::string::npos);
    }
}

TEST_CASE("gradient count must match the parameter count") {
    ad::ParamStore ps;
    ps.add("a", Matrix(1, 1, 0.0));
    ps.add("b", Matrix(1, 1, 0.0));
    ad::Adam opt(ps);
    Matrix g(1, 1, std::vector<double>{1.0});
    CHECK_THROWS_AS(opt.step(ps, {&g}, 0.1), std::invalid_argument);
}

TEST_CASE("param store lookups") {
    ad::ParamStore ps;
    ps.add("embed", Matrix(4, 2, 0.0));
    ps.add("head", Matrix(2, 3, 0.0));
    CHECK(ps.index_of("head") == 1);
    CHECK(ps.total_scalars() == 14);
    CHECK_THROWS_AS(ps.index_of("missing"), std::out_of_range);
}
