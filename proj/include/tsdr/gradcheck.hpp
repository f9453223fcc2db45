#pragma once

// Central finite-difference gradient checking. The model under test is given
// as a closure that rebuilds its forward pass from the current parameter
// values and returns the scalar loss, so the check is independent of how the
// analytic gradients were produced.

#include <cstdint>
#include <functional>
#include <vector>

#include "tsdr/adam.hpp"
#include "tsdr/matrix.hpp"
#include "tsdr/tape.hpp"

namespace tsdr::ad {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t probes = 0;
    bool saw_nan = false;

    bool ok(double tol) const { return !saw_nan && max_rel_error <= tol; }
};

// forward: build the loss from the current contents of `params` on the given
// tape, returning the loss Value and the leaf Values registered for each
// parameter (same order as the store).
using ForwardFn =
    std::function<Value(Tape&, ParamStore&, std::vector<Value>& param_leaves)>;

// Probes n_probes random parameter coordinates. Each probe compares the
// analytic gradient against (f(x+h) - f(x-h)) / 2h with relative error
// |a - d| / max(|a|, |d|, 1e-8). NaN anywhere makes the result a failure.
GradCheckResult gradient_check(ParamStore& params, const ForwardFn& forward,
                               std::size_t n_probes, std::uint64_t seed,
                               double fd_step = 1e-5);

} // namespace tsdr::ad
