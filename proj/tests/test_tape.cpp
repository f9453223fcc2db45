// test_tape.cpp
// Reverse-mode engine: every primitive against central finite differences,
// matmul against a hand-rolled oracle, and the bookkeeping contracts
// (fan-out accumulation, backward purity, repeatability, shape errors).

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "tsdr/rng.hpp"
#include "tsdr/tape.hpp"

using namespace tsdr;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, rng::Rng& rng, double lo = -1.5,
                     double hi = 1.5) {
    Matrix m(r, c);
    for (double& x : m.data) x = rng.uniform(lo, hi);
    return m;
}

// builds a scalar loss from one leaf matrix; used to finite-difference any
// single primitive
using BuildFn = std::function<ad::Value(ad::Tape&, ad::Value)>;

void check_against_fd(const Matrix& x0, const BuildFn& build, double tol = 1e-6,
                      double h = 1e-6) {
    ad::Tape tape;
    ad::Value x = tape.leaf(x0, true);
    ad::Value loss = build(tape, x);
    tape.backward(loss);
    const Matrix g = tape.grad(x);
    REQUIRE(g.rows == x0.rows);
    REQUIRE(g.cols == x0.cols);

    for (std::size_t i = 0; i < x0.size(); ++i) {
        Matrix plus = x0, minus = x0;
        plus.data[i] += h;
        minus.data[i] -= h;

        ad::Tape tp;
        const double fp = build(tp, tp.leaf(plus, false)).scalar();
        ad::Tape tm;
        const double fm = build(tm, tm.leaf(minus, false)).scalar();

        const double fd = (fp - fm) / (2.0 * h);
        const double err = std::fabs(g.data[i] - fd) /
                           std::max({std::fabs(g.data[i]), std::fabs(fd), 1e-8});
        CAPTURE(i);
        CHECK(err < tol);
    }
}

} // namespace

TEST_CASE("unary primitives match finite differences") {
    rng::Rng rng(31);
    const Matrix x = random_matrix(3, 4, rng);

    check_against_fd(x, [](ad::Tape& t, ad::Value v) { return t.sum_all(t.sigmoid(v)); });
    check_against_fd(x, [](ad::Tape& t, ad::Value v) { return t.sum_all(t.tanh_(v)); });
    check_against_fd(x, [](ad::Tape& t, ad::Value v) { return t.sum_all(t.softplus(v)); });
    check_against_fd(x, [](ad::Tape& t, ad::Value v) { return t.sum_all(t.square(v)); });
    check_against_fd(x, [](ad::Tape& t, ad::Value v) { return t.mean_all(t.scale(v, -2.5)); });
    check_against_fd(x, [](ad::Tape& t, ad::Value v) { return t.sum_all(t.add_scalar(v, 3.0)); });

    // log needs positive input
    Matrix pos = x;
    for (double& e : pos.data) e = std::fabs(e) + 0.5;
    check_against_fd(pos, [](ad::Tape& t, ad::Value v) { return t.sum_all(t.log_(v)); });
}

TEST_CASE("clamp passes gradient strictly inside the interval") {
    // values at 0.5 and 2.0 with clamp [0,1]: the first is interior (grad 1),
    // the second clipped (grad 0)
    Matrix x(1, 2, std::vector<double>{0.5, 2.0});
    ad::Tape tape;
    ad::Value v = tape.leaf(x, true);
    tape.backward(tape.sum_all(tape.clamp(v, 0.0, 1.0)));
    const Matrix& g = tape.grad(v);
    CHECK(g.data[0] == 1.0);
    CHECK(g.data[1] == 0.0);
}

TEST_CASE("binary primitives match finite differences") {
    rng::Rng rng(32);
    const Matrix a0 = random_matrix(3, 3, rng);
    const Matrix b0 = random_matrix(3, 3, rng);

    // differentiate w.r.t. the first operand, second held constant
    auto with_const = [&](auto op) {
        return [op, b0](ad::Tape& t, ad::Value v) {
            ad::Value b = t.constant(b0);
            return t.sum_all(op(t, v, b));
        };
    };
    check_against_fd(a0, with_const([](ad::Tape& t, ad::Value x, ad::Value y) {
        return t.add(x, y);
    }));
    check_against_fd(a0, with_const([](ad::Tape& t, ad::Value x, ad::Value y) {
        return t.sub(x, y);
    }));
    check_against_fd(a0, with_const([](ad::Tape& t, ad::Value x, ad::Value y) {
        return t.mul(x, y);
    }));
    check_against_fd(a0, with_const([](ad::Tape& t, ad::Value x, ad::Value y) {
        return t.matmul(x, y);
    }));
}

TEST_CASE("row and column reductions, broadcast add, concat, select") {
    rng::Rng rng(33);
    const Matrix x = random_matrix(4, 3, rng);

    check_against_fd(x, [](ad::Tape& t, ad::Value v) { return t.sum_all(t.square(t.row_sum(v))); });
    check_against_fd(x, [](ad::Tape& t, ad::Value v) { return t.sum_all(t.square(t.col_sum(v))); });

    const Matrix row = random_matrix(1, 3, rng);
    check_against_fd(x, [row](ad::Tape& t, ad::Value v) {
        return t.sum_all(t.square(t.add_rowvec(v, t.constant(row))));
    });
    // gradient w.r.t. the broadcast row itself
    check_against_fd(row, [x](ad::Tape& t, ad::Value v) {
        return t.sum_all(t.square(t.add_rowvec(t.constant(x), v)));
    });

    const Matrix other = random_matrix(4, 2, rng);
    check_against_fd(x, [other](ad::Tape& t, ad::Value v) {
        return t.sum_all(t.square(t.concat_cols(v, t.constant(other))));
    });

    check_against_fd(x, [](ad::Tape& t, ad::Value v) {
        return t.sum_all(t.square(t.select_rows(v, {0, 2, 2, 3})));
    });
}

TEST_CASE("bce matches its formula and finite differences") {
    Matrix target(1, 2, std::vector<double>{1.0, 0.0});
    Matrix pred(1, 2, std::vector<double>{0.7, 0.2});

    ad::Tape tape;
    ad::Value p = tape.leaf(pred, true);
    ad::Value loss = tape.sum_all(tape.bce(tape.constant(target), p));
    const double want = -std::log(0.7) - std::log(0.8);
    CHECK(loss.scalar() == doctest::Approx(want).epsilon(1e-12));

    check_against_fd(pred, [target](ad::Tape& t, ad::Value v) {
        return t.sum_all(t.bce(t.constant(target), v));
    });
}

TEST_CASE("matmul gradients match the dC rule") {
    // dA = dC * B^T, dB = A^T * dC with dC = ones (loss = sum of product)
    rng::Rng rng(34);
    const Matrix A = random_matrix(3, 5, rng);
    const Matrix B = random_matrix(5, 2, rng);

    ad::Tape tape;
    ad::Value a = tape.leaf(A, true);
    ad::Value b = tape.leaf(B, true);
    tape.backward(tape.sum_all(tape.matmul(a, b)));

    const Matrix& gA = tape.grad(a);
    const Matrix& gB = tape.grad(b);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t k = 0; k < 5; ++k) {
            double want = 0.0;
            for (std::size_t j = 0; j < 2; ++j) want += B.at(k, j);
            CHECK(gA.at(i, k) == doctest::Approx(want).epsilon(1e-12));
        }
    for (std::size_t k = 0; k < 5; ++k)
        for (std::size_t j = 0; j < 2; ++j) {
            double want = 0.0;
            for (std::size_t i = 0; i < 3; ++i) want += A.at(i, k);
            CHECK(gB.at(k, j) == doctest::Approx(want).epsilon(1e-12));
        }
}

TEST_CASE("fan-out accumulates gradients additively") {
    // f(x) = sum(x*x) + sum(x*x) uses x four times; grad = 4x
    Matrix x(2, 2, std::vector<double>{1.0, -2.0, 0.5, 3.0});
    ad::Tape tape;
    ad::Value v = tape.leaf(x, true);
    ad::Value l = tape.add(tape.sum_all(tape.mul(v, v)), tape.sum_all(tape.mul(v, v)));
    tape.backward(l);
    const Matrix& g = tape.grad(v);
    for (std::size_t i = 0; i < x.size(); ++i)
        CHECK(g.data[i] == doctest::Approx(4.0 * x.data[i]).epsilon(1e-14));
}

TEST_CASE("backward leaves forward values untouched and is repeatable") {
    rng::Rng rng(35);
    const Matrix x = random_matrix(3, 3, rng);
    ad::Tape tape;
    ad::Value v = tape.leaf(x, true);
    ad::Value loss = tape.sum_all(tape.sigmoid(tape.matmul(v, v)));
    const std::vector<double> before = tape.value(loss).data;
    const std::vector<double> x_before = tape.value(v).data;

    tape.backward(loss);
    const std::vector<double> g1 = tape.grad(v).data;
    CHECK(tape.value(loss).data == before);
    CHECK(tape.value(v).data == x_before);

    // a second backward restarts from zero, not doubling anything
    tape.backward(loss);
    const std::vector<double> g2 = tape.grad(v).data;
    CHECK(g1 == g2);
}

TEST_CASE("random composite graphs match finite differences") {
    rng::Rng rng(36);
    for (int rep = 0; rep < 5; ++rep) {
        const Matrix x = random_matrix(2, 3, rng, -0.8, 0.8);
        const Matrix w = random_matrix(3, 3, rng, -0.8, 0.8);
        check_against_fd(
            x,
            [w](ad::Tape& t, ad::Value v) {
                ad::Value h = t.tanh_(t.matmul(v, t.constant(w)));
                ad::Value s = t.sigmoid(t.add(h, h));
                return t.mean_all(t.square(t.sub(s, t.scale(h, 0.3))));
            },
            2e-6);
    }
}

TEST_CASE("shape violations and misuse are hard errors") {
    ad::Tape tape;
    ad::Value a = tape.constant(Matrix(2, 3, 1.0));
    ad::Value b = tape.constant(Matrix(2, 2, 1.0));
    CHECK_THROWS_AS(tape.add(a, b), std::invalid_argument);
    CHECK_THROWS_AS(tape.matmul(a, b), std::invalid_argument);
    CHECK_THROWS_AS(tape.add_rowvec(a, tape.constant(Matrix(1, 2, 0.0))),
                    std::invalid_argument);
    CHECK_THROWS_AS(tape.concat_cols(a, tape.constant(Matrix(3, 2, 0.0))),
                    std::invalid_argument);
    CHECK_THROWS_AS(tape.select_rows(a, {0, 5}), std::out_of_range);

    // backward demands a scalar
    CHECK_THROWS_AS(tape.backward(a), std::invalid_argument);
    // scalar() demands 1x1
    CHECK_THROWS_AS((void)a.scalar(), std::logic_error);
}

TEST_CASE("same graph twice gives bit-identical gradients") {
    rng::Rng rng(37);
    const Matrix x = random_matrix(4, 4, rng);
    std::vector<double> g1, g2;
    for (int rep = 0; rep < 2; ++rep) {
        ad::Tape tape;
        ad::Value v = tape.leaf(x, true);
        ad::Value h = tape.sigmoid(tape.matmul(v, v));
        ad::Value l = tape.mean_all(tape.square(tape.sub(h, tape.scale(v, 0.1))));
        tape.backward(l);
        (rep == 0 ? g1 : g2) = tape.grad(v).data;
    }
    CHECK(g1 == g2);
}
