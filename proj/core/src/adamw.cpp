// SPDX-License-Identifier: Apache-2.0
#include "sstune/adamw.hpp"

#include <cmath>
#include <string>

#include "sstune/error.hpp"

namespace sstune {

void validate(const AdamWOptions& o) {
  require(o.lr > 0.0, ErrorCode::kInvalidArgument, "learning rate must be positive");
  require(o.beta1 > 0.0 && o.beta1 < 1.0 && o.beta2 > 0.0 && o.beta2 < 1.0,
          ErrorCode::kInvalidArgument, "AdamW betas must lie in (0, 1)");
  require(o.eps >= 0.0 && o.weight_decay >= 0.0, ErrorCode::kInvalidArgument,
          "eps and weight_decay must be nonnegative");
}

OptimizerState OptimizerState::zeros(std::size_t parameters, AdamWOptions options) {
  validate(options);
  OptimizerState s;
  s.options = options;
  s.first_moment.assign(parameters, 0.0);
  s.second_moment.assign(parameters, 0.0);
  return s;
}

void adamw_step(OptimizerState& state, std::span<double> params, std::span<const double> grads) {
  require(params.size() == grads.size() && params.size() == state.first_moment.size() &&
              params.size() == state.second_moment.size(),
          ErrorCode::kShapeMismatch,
          "adamw: " + std::to_string(params.size()) + " params, " + std::to_string(grads.size()) +
              " grads, " + std::to_string(state.first_moment.size()) + " moments");
  const auto& o = state.options;
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(o.beta1, t);
  const double correction2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.first_moment[i] = o.beta1 * state.first_moment[i] + (1.0 - o.beta1) * g;
    state.second_moment[i] = o.beta2 * state.second_moment[i] + (1.0 - o.beta2) * g * g;
    const double m_hat = state.first_moment[i] / correction1;
    const double v_hat = state.second_moment[i] / correction2;
    const double decay = o.lr * o.weight_decay * params[i];
    params[i] -= o.lr * m_hat / (std::sqrt(v_hat) + o.eps) + decay;
  }
}

}  // namespace sstune
