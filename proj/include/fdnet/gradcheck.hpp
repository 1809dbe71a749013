#pragma once

#include <fdnet/ops.hpp>

namespace fdn {

struct GradCheckResult {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

// Compares the tape gradient of a scalar-valued tensor function against
// central finite differences. The function is evaluated in double precision
// for the difference quotient regardless of T, with step `fd_step`; the
// analytic gradient is taken at T. Error metric per element:
//   |analytic - numeric| / max(1, |numeric|).
//
// `f` must be callable for both TensorT<T> and TensorT<double> arguments
// (generic lambda).
template <typename T, typename F>
GradCheckResult grad_check(const std::string& name, F f, const TensorT<T>& x,
                           double tolerance, double fd_step = 1e-5) {
  GradCheckResult res;
  res.name = name;
  res.tolerance = tolerance;

  // Analytic gradient at T.
  std::vector<T> analytic;
  {
    TapeT<T> tape;
    TapeScopeT<T> scope(tape);
    TensorT<T> xa = x.clone();
    xa.set_requires_grad(true);
    TensorT<T> loss = f(xa);
    if (loss.numel() != 1)
      throw UsageError("grad_check: function is not scalar-valued");
    tape.backward(loss);
    analytic = tape.grad_of(xa);
  }

  // Central differences at double.
  TensorT<double> xd = tensor_cast<double>(x);
  auto xv = xd.data();
  const auto eval = [&]() -> double {
    TensorT<double> out = f(xd);
    if (out.numel() != 1)
      throw UsageError("grad_check: function is not scalar-valued");
    return out.item();
  };
  double max_err = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double v0 = xv[i];
    xv[i] = v0 + fd_step;
    const double fp = eval();
    xv[i] = v0 - fd_step;
    const double fm = eval();
    xv[i] = v0;
    const double numeric = (fp - fm) / (2.0 * fd_step);
    const double a = static_cast<double>(analytic[i]);
    const double err = std::abs(a - numeric) / std::max(1.0, std::abs(numeric));
    max_err = std::max(max_err, err);
  }
  res.max_rel_err = max_err;
  res.pass = max_err <= tolerance;
  return res;
}

}  // namespace fdn
