#pragma once

// Central finite-difference verification of reverse-mode gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "distill/tensor.hpp"

namespace distill {

using ScalarFn = std::function<Tensor(const Tensor&)>;

/// Compares the reverse-mode gradient of a scalar-valued op against central
/// differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps), coordinate by
/// coordinate. Returns the max relative error with denominator
/// max(|analytic|, |numeric|, 1e-8).
inline double finite_diff_check(const ScalarFn& op, const Tensor& input,
                                double eps) {
  if (!(eps > 0)) throw std::invalid_argument("finite_diff_check: eps must be > 0");

  Tensor x = input.detach();
  x.set_requires_grad(true);
  Tensor out = op(x);
  if (out.numel() != 1) {
    throw std::invalid_argument("finite_diff_check: op must be scalar-valued");
  }
  out.backward();
  if (!x.has_grad()) {
    throw std::runtime_error("finite_diff_check: op ignored its input");
  }
  const std::vector<double> analytic = x.grad();

  Tensor probe = input.detach();
  double max_rel = 0.0;
  for (std::size_t i = 0; i < probe.data().size(); ++i) {
    const double orig = probe.data()[i];
    probe.data()[i] = orig + eps;
    const double fp = op(probe).item();
    probe.data()[i] = orig - eps;
    const double fm = op(probe).item();
    probe.data()[i] = orig;
    const double numeric = (fp - fm) / (2.0 * eps);
    const double denom =
        std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    max_rel = std::max(max_rel, std::abs(analytic[i] - numeric) / denom);
  }
  return max_rel;
}

}  // namespace distill
