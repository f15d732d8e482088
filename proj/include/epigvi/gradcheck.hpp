#pragma once

#include <functional>

#include "epigvi/autodiff.hpp"

namespace epigvi::ad {

/// A scalar-valued differentiable function of one tensor input. The builder
/// is invoked on a fresh tape for the analytic pass and with constant inputs
/// for the finite-difference evaluations, so it must be deterministic given
/// its input (fix all noise outside).
using ScalarFn = std::function<Var(Tape&, const Var&)>;

/// Compares the analytic gradient of f at `point` against central finite
/// differences with step `eps`. Returns the maximum over coordinates of
/// |analytic - numeric| / max(1, |analytic|).
double grad_check(const ScalarFn& f, const ArrayXXd& point, double eps);

}  // namespace epigvi::ad
