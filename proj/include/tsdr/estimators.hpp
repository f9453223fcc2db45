#pragma once

// Risk estimators over a prediction grid. A grid covers every (step, concept)
// cell of a student batch; o marks which cells were actually observed. The
// error e is only defined where o = 1 unless a simulator supplied
// counterfactual ground truth for the full grid; undefined cells hold NaN and
// the estimators guarantee never to read them.

#include <cstddef>
#include <string>

#include "tsdr/matrix.hpp"

namespace tsdr::est {

struct RiskInputs {
    Matrix e;     // prediction error per cell; NaN where undefined
    Matrix e_hat; // imputed error per cell
    Matrix p;     // ground-truth observation propensity (when known)
    Matrix p_hat; // estimated observation propensity, already clipped
    Matrix o;     // observation indicator, 0.0 or 1.0

    std::size_t cells() const { return o.size(); }
    void validate() const; // shape agreement, o in {0,1}, p_hat > 0 where needed
};

// binary cross-entropy of a single 0/1 outcome against a probability;
// the probability is clamped to [1e-7, 1 - 1e-7] before the logs
double bce_error(int response, double prediction);

// mean error over every cell; requires e defined (non-NaN) everywhere
double true_risk(const Matrix& e);

// mean error over observed cells only; never reads e where o = 0
double naive_risk(const Matrix& e, const Matrix& o);

// (1/N) sum[ e_hat + (o / p_hat) (e - e_hat) ]; reads e only where o = 1
double dr_risk(const Matrix& e, const Matrix& e_hat, const Matrix& p_hat,
               const Matrix& o);

// closed-form expectation of dr_risk over o ~ Bernoulli(p):
// (1/N) sum[ e_hat + (p / p_hat) (e - e_hat) ]; requires e everywhere
double expected_dr(const Matrix& e, const Matrix& e_hat, const Matrix& p,
                   const Matrix& p_hat);

// imputation residual and inverse-propensity gap per cell
// delta = e - e_hat, Delta = 1 - p / p_hat
Matrix delta(const Matrix& e, const Matrix& e_hat);
Matrix Delta(const Matrix& p, const Matrix& p_hat);

// deterministic bias bound (1/N) sum |Delta * delta|
double bias_bound(const Matrix& delta, const Matrix& Delta);

// concentration half-width sqrt( ln(2 H / eta) / (2 N^2) * sum (delta/p_hat)^2 )
double variance_term(const Matrix& delta, const Matrix& p_hat, double hypothesis_count,
                     double eta);

struct RiskReport {
    std::size_t cells = 0;
    double true_risk = 0.0;
    double naive_risk = 0.0;
    double dr_risk = 0.0;
    double expected_dr = 0.0;
    double bias_bound = 0.0;
    double variance_term = 0.0;
    bool has_ground_truth = false; // true_risk/expected_dr/bias_bound valid
};

// Full report from one grid; uses ground-truth p only when provided
// (p.empty() means unavailable). eta/hypothesis_count feed variance_term.
RiskReport risk_report(const RiskInputs& in, double hypothesis_count = 1.0,
                       double eta = 0.05);

} // namespace tsdr::est
