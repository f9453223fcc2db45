#pragma once

// Numerical checks of the estimator's claimed properties. Each check appends
// rows {check, seed, statistic, threshold, pass} to a report; everything is
// deterministic given its seed.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "tsdr/matrix.hpp"
#include "tsdr/rng.hpp"
#include "tsdr/synth.hpp"
#include "tsdr/training.hpp"

namespace tsdr::theory {

struct CheckResult {
    std::string check;
    std::uint64_t seed = 0;
    double statistic = 0.0;
    double threshold = 0.0;
    bool pass = false;
    std::string detail;
};

struct Report {
    std::vector<CheckResult> checks;

    bool all_pass() const;
    void print(std::ostream& out) const; // one key=value line per check
    void save(const std::string& path) const;
};

// --- random estimator worlds ---------------------------------------------------

struct WorldConfig {
    std::size_t max_cells = 200;
    double p_lo = 0.05, p_hi = 1.0; // propensities
    double e_lo = 0.0, e_hi = 3.0;  // errors
};

struct World {
    Matrix e, e_hat, p, p_hat;
};

World random_world(rng::Rng& rng, const WorldConfig& cfg = {});

// --- checks ----------------------------------------------------------------------

// Monte Carlo: draw o ~ Bernoulli(p) n_trials times and compare the mean DR
// estimate to the true risk within 4 * (sample std) / sqrt(n_trials) + 1e-12.
// Three rows: correct propensity (imputation zeroed), correct imputation
// (propensity floored, zero variance), and the deliberately wrong pair
// (p_hat = p/2, e_hat = e/2) whose row passes only if the bias IS detected.
void verify_unbiasedness(Report& report, std::uint64_t seed,
                         std::size_t n_trials = 100000);

// |expected_dr - true_risk| <= bias_bound + 1e-12 over random worlds;
// statistic is the worst gap minus its bound
void verify_bias_bound(Report& report, std::size_t n_worlds, std::uint64_t seed);

// sum ||h_t - h_{t-1}|| <= sqrt(n_steps * sum ||h_t - h_{t-1}||^2) + 1e-10
// over random trajectories, plus exact equality on an equal-step trajectory
void verify_path_length(Report& report, std::size_t n_trajectories, std::size_t dim,
                        std::uint64_t seed);

// Train small observed-only models over a missingness grid and measure the
// gap between the naive risk estimate and the true full-grid risk on held
// out students. Asserts the gap at the top missingness level clears the
// gamma = 0 noise band (null mean + 4 standard errors), exceeds 3x the
// gamma = 0 gap, and grows with gamma (mean per-seed rank correlation > 0).
struct NaiveBiasProfile {
    synth::SynthConfig synth;      // scaled down in the default profile
    train::TrainConfig train_cfg;  // mode forced to "naive"
    std::vector<double> gammas{0.0, 0.4, 0.8, 0.999};
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};

    static NaiveBiasProfile quick();
};

void verify_naive_bias(Report& report, const NaiveBiasProfile& profile,
                       std::ostream* log = nullptr);

// Appends a row that claims unbiasedness for the deliberately wrong world
// and therefore must fail; exercises the failure exit path end to end.
void inject_misspecified_failure(Report& report, std::uint64_t seed,
                                 std::size_t n_trials = 20000);

} // namespace tsdr::theory
