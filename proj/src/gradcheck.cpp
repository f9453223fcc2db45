#include "tsdr/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "tsdr/rng.hpp"

namespace tsdr::ad {

namespace {

double eval_loss(ParamStore& params, const ForwardFn& forward) {
    Tape tape;
    std::vector<Value> leaves;
    const Value loss = forward(tape, params, leaves);
    return loss.scalar();
}

} // namespace

GradCheckResult gradient_check(ParamStore& params, const ForwardFn& forward,
                               std::size_t n_probes, std::uint64_t seed,
                               double fd_step) {
    GradCheckResult res;
    if (params.total_scalars() == 0) return res;

    // one analytic pass; leaves are re-registered so grads line up with params
    Tape tape;
    std::vector<Value> leaves;
    const Value loss = forward(tape, params, leaves);
    if (leaves.size() != params.size())
        throw std::logic_error("gradient_check: forward registered " +
                               std::to_string(leaves.size()) + " leaves for " +
                               std::to_string(params.size()) + " parameters");
    tape.backward(loss);
    if (!std::isfinite(loss.scalar())) res.saw_nan = true;

    std::vector<Matrix> analytic;
    analytic.reserve(params.size());
    for (const Value v : leaves) analytic.push_back(tape.grad(v));

    rng::Rng rng(seed);
    for (std::size_t probe = 0; probe < n_probes; ++probe) {
        const std::size_t pi = static_cast<std::size_t>(rng.below(params.size()));
        if (params[pi].size() == 0) continue;
        const std::size_t ei = static_cast<std::size_t>(rng.below(params[pi].size()));

        const double saved = params[pi].data[ei];
        params[pi].data[ei] = saved + fd_step;
        const double f_plus = eval_loss(params, forward);
        params[pi].data[ei] = saved - fd_step;
        const double f_minus = eval_loss(params, forward);
        params[pi].data[ei] = saved;

        const double numeric = (f_plus - f_minus) / (2.0 * fd_step);
        const double a = analytic[pi].empty() ? 0.0 : analytic[pi].data[ei];
        if (!std::isfinite(numeric) || !std::isfinite(a)) {
            res.saw_nan = true;
            continue;
        }
        const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
        res.max_rel_error = std::max(res.max_rel_error, std::fabs(a - numeric) / denom);
        ++res.probes;
    }
    return res;
}

} // namespace tsdr::ad
