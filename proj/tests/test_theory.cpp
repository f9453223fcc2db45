// Reduced-cost runs of the estimator property checks: both unbiasedness arms
// hold, the negative control and the injected misspecified world are caught,
// and the report serializes in the key=value line format.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "tsdr/theory.hpp"

using namespace tsdr;

namespace {

const theory::CheckResult& row(const theory::Report& rep, const std::string& name) {
    auto it = std::find_if(rep.checks.begin(), rep.checks.end(),
                           [&](const theory::CheckResult& c) { return c.check == name; });
    REQUIRE(it != rep.checks.end());
    return *it;
}

} // namespace

TEST_CASE("unbiasedness arms pass and the negative control is detected") {
    theory::Report rep;
    theory::verify_unbiasedness(rep, 17, 20000);
    REQUIRE(rep.checks.size() == 3);

    const auto& prop = row(rep, "unbiasedness_true_propensity");
    const auto& imp = row(rep, "unbiasedness_true_imputation");
    const auto& neg = row(rep, "unbiasedness_negative_control");

    CHECK(prop.pass);
    CHECK(imp.pass);
    // The control row passes because the bias WAS detected, and its statistic
    // (the Monte Carlo gap) sits far outside the arms' confidence radius.
    CHECK(neg.pass);
    CHECK(neg.statistic > neg.threshold);
    CHECK(neg.statistic > 10.0 * prop.threshold);
    CHECK(rep.all_pass());
}

TEST_CASE("unbiasedness is seed deterministic") {
    theory::Report a, b, c;
    theory::verify_unbiasedness(a, 5, 5000);
    theory::verify_unbiasedness(b, 5, 5000);
    theory::verify_unbiasedness(c, 6, 5000);
    REQUIRE(a.checks.size() == b.checks.size());
    for (std::size_t i = 0; i < a.checks.size(); ++i) {
        CHECK(a.checks[i].statistic == b.checks[i].statistic);
        CHECK(a.checks[i].threshold == b.checks[i].threshold);
    }
    bool any_diff = false;
    for (std::size_t i = 0; i < a.checks.size(); ++i)
        if (a.checks[i].statistic != c.checks[i].statistic) any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("injected misspecified world flips all_pass to false") {
    theory::Report rep;
    theory::verify_unbiasedness(rep, 17, 20000);
    REQUIRE(rep.all_pass());

    theory::inject_misspecified_failure(rep, 17, 10000);
    const auto& r = row(rep, "injected_misspecified_world");
    CHECK_FALSE(r.pass);
    CHECK_FALSE(rep.all_pass());
}

TEST_CASE("bias bound holds over random worlds") {
    theory::Report rep;
    theory::verify_bias_bound(rep, 300, 23);
    const auto& r = row(rep, "bias_bound");
    CHECK(r.pass);
    // statistic is the worst gap-minus-bound; non-positive up to float slack
    CHECK(r.statistic <= r.threshold);
    CHECK(r.statistic <= 1e-12);
}

TEST_CASE("path length inequality and the equal-step equality case") {
    theory::Report rep;
    theory::verify_path_length(rep, 200, 32, 41);
    CHECK(row(rep, "path_length").pass);
    CHECK(row(rep, "path_length_equality").pass);
    CHECK(rep.all_pass());
}

TEST_CASE("random worlds respect the configured ranges") {
    rng::Rng r(99);
    theory::WorldConfig cfg;
    cfg.max_cells = 50;
    for (int rep = 0; rep < 50; ++rep) {
        theory::World w = theory::random_world(r, cfg);
        REQUIRE(w.e.rows == w.p.rows);
        REQUIRE(w.e.cols == w.p.cols);
        REQUIRE(w.e.size() >= 1);
        REQUIRE(w.e.size() <= cfg.max_cells);
        for (std::size_t i = 0; i < w.p.size(); ++i) {
            CHECK(w.p.data[i] >= cfg.p_lo);
            CHECK(w.p.data[i] <= cfg.p_hi);
            CHECK(w.p_hat.data[i] >= cfg.p_lo);
            CHECK(w.e.data[i] >= cfg.e_lo);
            CHECK(w.e.data[i] <= cfg.e_hi);
        }
    }
}

TEST_CASE("report prints one key=value line per check and saves to disk") {
    theory::Report rep;
    theory::CheckResult c;
    c.check = "bias_bound";
    c.seed = 7;
    c.statistic = -0.25;
    c.threshold = 0.0;
    c.pass = true;
    c.detail = "worst gap";
    rep.checks.push_back(c);

    std::ostringstream out;
    rep.print(out);
    const std::string line = out.str();
    CHECK(line.find("check=bias_bound") != std::string::npos);
    CHECK(line.find("seed=7") != std::string::npos);
    CHECK(line.find("statistic=-0.25") != std::string::npos);
    CHECK(line.find("threshold=0") != std::string::npos);
    CHECK(line.find("pass=true") != std::string::npos);
    CHECK(line.find("detail=\"worst gap\"") != std::string::npos);
    CHECK(std::count(line.begin(), line.end(), '\n') == 1);

    const std::string path = "theory_report_test.txt";
    rep.save(path);
    std::ifstream in(path);
    REQUIRE(in.good());
    std::string saved((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(saved == line);
    std::remove(path.c_str());
}
