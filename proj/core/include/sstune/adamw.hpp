// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace sstune {

struct AdamWOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

void validate(const AdamWOptions& options);

struct OptimizerState {
  AdamWOptions options;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::size_t step_count = 0;

  static OptimizerState zeros(std::size_t parameters, AdamWOptions options = {});
};

/// One AdamW update with decoupled weight decay:
///   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
///   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta
/// The decay term uses theta before the update.
void adamw_step(OptimizerState& state, std::span<double> params, std::span<const double> grads);

}  // namespace sstune
