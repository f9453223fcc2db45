#include "tsdr/estimators.hpp"

#include <cmath>
#include <stdexcept>

namespace tsdr::est {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* who) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(who) + ": shape mismatch " +
                                    a.shape_str() + " vs " + b.shape_str());
}

void require_nonempty(const Matrix& m, const char* who) {
    if (m.size() == 0)
        throw std::invalid_argument(std::string(who) + ": empty grid");
}

} // namespace

void RiskInputs::validate() const {
    require_nonempty(o, "RiskInputs");
    require_same_shape(e, o, "RiskInputs.e");
    require_same_shape(e_hat, o, "RiskInputs.e_hat");
    require_same_shape(p_hat, o, "RiskInputs.p_hat");
    if (!p.empty()) require_same_shape(p, o, "RiskInputs.p");
    for (std::size_t i = 0; i < o.size(); ++i) {
        if (o.data[i] != 0.0 && o.data[i] != 1.0)
            throw std::invalid_argument("RiskInputs: o must be 0 or 1");
        if (o.data[i] == 1.0 && !(p_hat.data[i] > 0.0))
            throw std::invalid_argument("RiskInputs: p_hat must be positive where observed");
        if (o.data[i] == 1.0 && std::isnan(e.data[i]))
            throw std::invalid_argument("RiskInputs: e undefined at an observed cell");
    }
}

double bce_error(int response, double prediction) {
    if (response != 0 && response != 1)
        throw std::invalid_argument("bce_error: response must be 0 or 1");
    constexpr double lo = 1e-7;
    constexpr double hi = 1.0 - 1e-7;
    const double p = prediction < lo ? lo : (prediction > hi ? hi : prediction);
    return response == 1 ? -std::log(p) : -std::log(1.0 - p);
}

double true_risk(const Matrix& e) {
    require_nonempty(e, "true_risk");
    double acc = 0.0;
    for (const double v : e.data) {
        if (std::isnan(v))
            throw std::invalid_argument("true_risk: undefined error cell (needs full ground truth)");
        acc += v;
    }
    return acc / static_cast<double>(e.size());
}

double naive_risk(const Matrix& e, const Matrix& o) {
    require_nonempty(o, "naive_risk");
    require_same_shape(e, o, "naive_risk");
    double acc = 0.0;
    double n_obs = 0.0;
    for (std::size_t i = 0; i < o.size(); ++i) {
        if (o.data[i] == 1.0) {
            acc += e.data[i];
            n_obs += 1.0;
        }
    }
    if (n_obs == 0.0)
        throw std::invalid_argument("naive_risk: no observed cells");
    return acc / n_obs;
}

double dr_risk(const Matrix& e, const Matrix& e_hat, const Matrix& p_hat,
               const Matrix& o) {
    require_nonempty(o, "dr_risk");
    require_same_shape(e, o, "dr_risk.e");
    require_same_shape(e_hat, o, "dr_risk.e_hat");
    require_same_shape(p_hat, o, "dr_risk.p_hat");
    double acc = 0.0;
    for (std::size_t i = 0; i < o.size(); ++i) {
        acc += e_hat.data[i];
        if (o.data[i] == 1.0) {
            if (!(p_hat.data[i] > 0.0))
                throw std::invalid_argument("dr_risk: nonpositive p_hat at observed cell");
            acc += (e.data[i] - e_hat.data[i]) / p_hat.data[i];
        }
    }
    return acc / static_cast<double>(o.size());
}

double expected_dr(const Matrix& e, const Matrix& e_hat, const Matrix& p,
                   const Matrix& p_hat) {
    require_nonempty(e, "expected_dr");
    require_same_shape(e_hat, e, "expected_dr.e_hat");
    require_same_shape(p, e, "expected_dr.p");
    require_same_shape(p_hat, e, "expected_dr.p_hat");
    double acc = 0.0;
    for (std::size_t i = 0; i < e.size(); ++i) {
        if (std::isnan(e.data[i]))
            throw std::invalid_argument("expected_dr: undefined error cell");
        if (!(p_hat.data[i] > 0.0))
            throw std::invalid_argument("expected_dr: nonpositive p_hat");
        acc += e_hat.data[i] + (p.data[i] / p_hat.data[i]) * (e.data[i] - e_hat.data[i]);
    }
    return acc / static_cast<double>(e.size());
}

Matrix delta(const Matrix& e, const Matrix& e_hat) {
    require_same_shape(e, e_hat, "delta");
    Matrix d(e.rows, e.cols);
    for (std::size_t i = 0; i < e.size(); ++i) d.data[i] = e.data[i] - e_hat.data[i];
    return d;
}

Matrix Delta(const Matrix& p, const Matrix& p_hat) {
    require_same_shape(p, p_hat, "Delta");
    Matrix d(p.rows, p.cols);
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (!(p_hat.data[i] > 0.0))
            throw std::invalid_argument("Delta: nonpositive p_hat");
        d.data[i] = 1.0 - p.data[i] / p_hat.data[i];
    }
    return d;
}

double bias_bound(const Matrix& delta, const Matrix& Delta) {
    require_nonempty(delta, "bias_bound");
    require_same_shape(delta, Delta, "bias_bound");
    double acc = 0.0;
    for (std::size_t i = 0; i < delta.size(); ++i)
        acc += std::fabs(Delta.data[i] * delta.data[i]);
    return acc / static_cast<double>(delta.size());
}

double variance_term(const Matrix& delta, const Matrix& p_hat, double hypothesis_count,
                     double eta) {
    require_nonempty(delta, "variance_term");
    require_same_shape(delta, p_hat, "variance_term");
    if (!(hypothesis_count >= 1.0))
        throw std::invalid_argument("variance_term: hypothesis_count must be >= 1");
    if (!(eta > 0.0 && eta < 1.0))
        throw std::invalid_argument("variance_term: eta must be in (0,1)");
    double ssq = 0.0;
    for (std::size_t i = 0; i < delta.size(); ++i) {
        if (!(p_hat.data[i] > 0.0))
            throw std::invalid_argument("variance_term: nonpositive p_hat");
        const double r = delta.data[i] / p_hat.data[i];
        ssq += r * r;
    }
    const double n = static_cast<double>(delta.size());
    return std::sqrt(std::log(2.0 * hypothesis_count / eta) / (2.0 * n * n) * ssq);
}

RiskReport risk_report(const RiskInputs& in, double hypothesis_count, double eta) {
    in.validate();
    RiskReport r;
    r.cells = in.cells();
    r.naive_risk = naive_risk(in.e, in.o);
    r.dr_risk = dr_risk(in.e, in.e_hat, in.p_hat, in.o);

    bool full_e = true;
    for (const double v : in.e.data) {
        if (std::isnan(v)) {
            full_e = false;
            break;
        }
    }
    r.has_ground_truth = full_e && !in.p.empty();
    if (r.has_ground_truth) {
        r.true_risk = true_risk(in.e);
        r.expected_dr = expected_dr(in.e, in.e_hat, in.p, in.p_hat);
        const Matrix d = delta(in.e, in.e_hat);
        const Matrix D = Delta(in.p, in.p_hat);
        r.bias_bound = bias_bound(d, D);
        r.variance_term = variance_term(d, in.p_hat, hypothesis_count, eta);
    }
    return r;
}

} // namespace tsdr::est
