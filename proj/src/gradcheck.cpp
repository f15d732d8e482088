#include "epigvi/gradcheck.hpp"

#include <cmath>

namespace epigvi::ad {

namespace {

double evaluate(const ScalarFn& f, const ArrayXXd& point) {
  Tape tape;
  Var x = tape.leaf(point);
  Var y = f(tape, x);
  if (y.size() != 1) throw ContractError("grad_check: f must return a scalar");
  const double v = y.value()(0, 0);
  if (!std::isfinite(v))
    throw NumericError("grad_check: non-finite function value");
  return v;
}

}  // namespace

double grad_check(const ScalarFn& f, const ArrayXXd& point, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3))
    throw ContractError("grad_check: eps must lie in [1e-7, 1e-3]");

  Tape tape;
  Var x = tape.leaf(point);
  Var y = f(tape, x);
  if (y.size() != 1) throw ContractError("grad_check: f must return a scalar");
  if (!std::isfinite(y.value()(0, 0)))
    throw NumericError("grad_check: non-finite function value");
  tape.backward(y);
  const ArrayXXd analytic = tape.adjoint(x);

  double worst = 0.0;
  for (Index j = 0; j < point.cols(); ++j) {
    for (Index i = 0; i < point.rows(); ++i) {
      ArrayXXd p = point;
      p(i, j) += eps;
      const double up = evaluate(f, p);
      p(i, j) = point(i, j) - eps;
      const double dn = evaluate(f, p);
      const double numeric = (up - dn) / (2.0 * eps);
      const double a = analytic(i, j);
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace epigvi::ad
