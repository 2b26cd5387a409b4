#pragma once

// SGD with momentum and a stepped learning-rate schedule.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "distill/tensor.hpp"

namespace distill {

/// Optimizer state. The schedule is a list of (step, multiplier) pairs; the
/// multiplier of the latest entry with step <= step_count scales the base
/// learning rate (1.0 before the first entry).
struct OptimState {
  double learning_rate = 1e-3;
  double momentum = 0.9;
  std::vector<std::pair<std::int64_t, double>> lr_schedule;
  std::int64_t step_count = 0;
  std::map<std::string, std::vector<double>> velocity;

  double effective_lr() const {
    double mult = 1.0;
    std::int64_t best = -1;
    for (const auto& [step, m] : lr_schedule) {
      if (step <= step_count && step >= best) {
        best = step;
        mult = m;
      }
    }
    return learning_rate * mult;
  }

  void validate() const {
    if (!(learning_rate > 0)) {
      throw std::invalid_argument("optim: learning_rate must be > 0");
    }
    if (!(momentum >= 0 && momentum < 1)) {
      throw std::invalid_argument("optim: momentum must be in [0, 1)");
    }
  }
};

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

/// One SGD step: v <- momentum * v + grad; p <- p - lr_eff * v. Frozen
/// parameters (requires_grad == false) are skipped; a trainable parameter
/// without a gradient buffer is an error. Velocity buffers are created on
/// first use, keyed by parameter name.
inline void sgd_step(const NamedParams& params, OptimState& state) {
  state.validate();
  const double lr = state.effective_lr();
  for (const auto& [name, param] : params) {
    if (!param.requires_grad()) continue;
    if (!param.has_grad()) {
      throw std::runtime_error("sgd_step: parameter '" + name +
                               "' has no gradient");
    }
    auto& v = state.velocity[name];
    auto& p = param.node()->data;
    const auto& g = param.node()->grad;
    if (v.empty()) v.assign(p.size(), 0.0);
    if (v.size() != p.size()) {
      throw std::runtime_error("sgd_step: velocity shape mismatch for '" +
                               name + "'");
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = state.momentum * v[i] + g[i];
      p[i] -= lr * v[i];
    }
  }
  ++state.step_count;
}

inline void zero_grads(const NamedParams& params) {
  for (const auto& [name, param] : params) {
    (void)name;
    param.node()->grad.assign(param.node()->data.size(), 0.0);
  }
}

}  // namespace distill
