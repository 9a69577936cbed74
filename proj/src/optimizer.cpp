#include "cascade/optimizer.hpp"

#include <cmath>

#include "cascade/errors.hpp"
#include "cascade/kernels.hpp"

namespace cascade::policy {

OptimizerState::OptimizerState(const PolicyParams& params, AdamWConfig cfg)
    : first_moment(params.num_params(), 0.0),
      second_moment(params.num_params(), 0.0),
      config(cfg) {}

void adamw_update(PolicyParams& params, OptimizerState& state, std::span<const double> gradient,
                  double lr, int workers) {
  if (!(lr >= 0.0)) throw InvalidArgument("learning rate must be non-negative");
  const std::size_t n = params.num_params();
  if (gradient.size() != n || state.first_moment.size() != n || state.second_moment.size() != n)
    throw InvalidArgument("optimizer state / gradient shape does not match the policy");
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(gradient[i])) throw NumericFault("non-finite gradient entry", i);

  state.step_count += 1;
  const auto t = static_cast<double>(state.step_count);
  kernels::AdamWCoefficients c;
  c.lr = lr;
  c.beta1 = state.config.beta1;
  c.beta2 = state.config.beta2;
  c.epsilon = state.config.epsilon;
  c.weight_decay = state.config.weight_decay;
  c.bias_correction1 = 1.0 - std::pow(c.beta1, t);
  c.bias_correction2 = 1.0 - std::pow(c.beta2, t);
  kernels::omp::adamw_step(params.logits(), state.first_moment, state.second_moment, gradient, c,
                           workers);
}

}  // namespace cascade::policy
