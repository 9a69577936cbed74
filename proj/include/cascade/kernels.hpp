#pragma once

// Data-parallel inner loops. Every kernel exists twice: `serial` is the straightforward
// reference kept for testing and benchmarking, `omp` is the OpenMP version used by the
// trainers. The OpenMP versions only write disjoint slots inside parallel regions and do all
// floating-point reductions serially in a fixed order, so their output does not depend on the
// thread count.

#include <cstdint>
#include <span>
#include <vector>

#include "cascade/policy.hpp"

namespace cascade::kernels {

struct AdamWCoefficients {
  double lr = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
  double bias_correction1 = 1.0;  // 1 - beta1^t
  double bias_correction2 = 1.0;  // 1 - beta2^t
};

/// One prompt to sample for: the prompt tokens and the rollout's private seed.
struct SampleJob {
  std::span<const policy::TokenId> prompt;
  std::uint64_t seed = 0;
};

/// One prompt to evaluate the exact reverse KL for, against its own teacher.
struct KlJob {
  std::span<const policy::TokenId> prompt;
  const policy::PolicyParams* teacher = nullptr;
};

/// Resolves a worker request: values < 1 mean "all available".
int resolve_workers(int workers);

namespace serial {

void nll_gradient(const policy::PolicyParams& params,
                  std::span<const policy::WeightedSequence> batch, policy::Gradient& grad);

void adamw_step(std::span<double> params, std::span<double> first_moment,
                std::span<double> second_moment, std::span<const double> grad,
                const AdamWCoefficients& c);

std::vector<policy::Rollout> sample_batch(const policy::PolicyParams& params,
                                          std::span<const SampleJob> jobs, int max_len,
                                          policy::SamplingParams sampling);

/// Sequence-level KL(student || teacher) over responses of at most `max_len` tokens, one value
/// per job, computed exactly by propagating state probabilities forward.
std::vector<double> reverse_kl(const policy::PolicyParams& student, std::span<const KlJob> jobs,
                               int max_len);

}  // namespace serial

namespace omp {

void nll_gradient(const policy::PolicyParams& params,
                  std::span<const policy::WeightedSequence> batch, policy::Gradient& grad,
                  int workers = 0);

void adamw_step(std::span<double> params, std::span<double> first_moment,
                std::span<double> second_moment, std::span<const double> grad,
                const AdamWCoefficients& c, int workers = 0);

std::vector<policy::Rollout> sample_batch(const policy::PolicyParams& params,
                                          std::span<const SampleJob> jobs, int max_len,
                                          policy::SamplingParams sampling, int workers = 0);

std::vector<double> reverse_kl(const policy::PolicyParams& student, std::span<const KlJob> jobs,
                               int max_len, int workers = 0);

}  // namespace omp

}  // namespace cascade::kernels
