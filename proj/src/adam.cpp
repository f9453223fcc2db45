#include "tsdr/adam.hpp"

#include <cmath>

namespace tsdr::ad {

Adam::Adam(const ParamStore& params, AdamConfig cfg) : cfg_(cfg) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const Matrix& p : params.values) {
        m_.emplace_back(p.rows, p.cols);
        v_.emplace_back(p.rows, p.cols);
    }
}

void Adam::step(ParamStore& params, const std::vector<const Matrix*>& grads, double lr) {
    if (grads.size() != params.size())
        throw std::invalid_argument("Adam::step: gradient count does not match parameters");

    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));

    for (std::size_t i = 0; i < params.size(); ++i) {
        Matrix& p = params.values[i];
        Matrix& m = m_[i];
        Matrix& v = v_[i];
        const Matrix* g = grads[i];
        if (g != nullptr && !g->empty() && !g->same_shape(p))
            throw std::invalid_argument("Adam::step: gradient shape mismatch for '" +
                                        params.names[i] + "'");
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double gj = (g != nullptr && !g->empty()) ? g->data[j] : 0.0;
            if (!std::isfinite(gj))
                throw std::runtime_error("Adam::step: non-finite gradient in '" +
                                         params.names[i] + "'");
            m.data[j] = cfg_.beta1 * m.data[j] + (1.0 - cfg_.beta1) * gj;
            v.data[j] = cfg_.beta2 * v.data[j] + (1.0 - cfg_.beta2) * gj * gj;
            const double mhat = m.data[j] / bc1;
            const double vhat = v.data[j] / bc2;
            p.data[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

} // namespace tsdr::ad
