#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cascade/policy.hpp"

namespace cascade::policy {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.0;
  double epsilon = 1e-8;
};

/// Adam moments for one PolicyParams table.
struct OptimizerState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::int64_t step_count = 0;
  AdamWConfig config;

  OptimizerState() = default;
  OptimizerState(const PolicyParams& params, AdamWConfig cfg);
};

/// Decoupled-weight-decay Adam step with bias correction, applied in place:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
///   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
/// Throws NumericFault (with the offending index) on a non-finite gradient entry, before any
/// state is modified.
void adamw_update(PolicyParams& params, OptimizerState& state, std::span<const double> gradient,
                  double lr, int workers = 0);

}  // namespace cascade::policy
