// Central finite-difference gradient checking. The numeric side rebuilds the
// forward pass from perturbed copies of the input, so it never shares a graph
// with the analytic sweep.

#pragma once

#include <functional>
#include <string>

#include "gatedap/tensor.hpp"

namespace gatedap {

struct GradCheckReport {
  real max_rel_err = 0.0;
  std::size_t worst_index = 0;
  bool pass = false;
};

// f must be scalar-valued. h is the central-difference step.
inline GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x0,
                                  real h = 1e-5, real tol = 1e-4) {
  Tensor x = Tensor::from_values(x0.shape(), x0.value());
  x.set_requires_grad(true);
  Tensor loss = f(x);
  if (loss.size() != 1) throw UsageError("grad_check: f must be scalar-valued");
  backward(loss);
  std::vector<real> analytic = x.grad();

  GradCheckReport rep;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor xp = Tensor::from_values(x0.shape(), x0.value());
    xp.value()[i] += h;
    Tensor xm = Tensor::from_values(x0.shape(), x0.value());
    xm.value()[i] -= h;
    const real numeric = (f(xp).item() - f(xm).item()) / (2.0 * h);
    const real a = analytic[i];
    const real err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
    if (err > rep.max_rel_err) {
      rep.max_rel_err = err;
      rep.worst_index = i;
    }
  }
  rep.pass = rep.max_rel_err < tol;
  return rep;
}

}  // namespace gatedap
