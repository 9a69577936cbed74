#include <omp.h>

#include <cmath>
#include <exception>
#include <map>
#include <unordered_map>

#include "cascade/kernels.hpp"

namespace cascade::kernels {

int resolve_workers(int workers) { return workers >= 1 ? workers : omp_get_max_threads(); }

namespace omp {

using policy::Gradient;
using policy::PolicyParams;
using policy::TokenId;

namespace {

// Captures the first exception thrown inside a parallel region and rethrows it afterwards;
// exceptions must not escape an OpenMP structured block.
class ExceptionSlot {
 public:
  template <typename F>
  void run(F&& f) noexcept {
    try {
      f();
    } catch (...) {
#pragma omp critical(cascade_exception_slot)
      if (!error_) error_ = std::current_exception();
    }
  }
  void rethrow() const {
    if (error_) std::rethrow_exception(error_);
  }

 private:
  std::exception_ptr error_;
};

struct StateAccumulator {
  std::size_t context;
  double total_weight = 0.0;
  std::vector<double> token_weight;
};

}  // namespace

void nll_gradient(const PolicyParams& params, std::span<const policy::WeightedSequence> batch,
                  Gradient& grad, int workers) {
  const std::size_t v = static_cast<std::size_t>(params.vocab_size());

  // Bucket token weights by state in a fixed (first-touch) order. The gradient of one state's
  // row is then total_weight * softmax(row) - token_weight, independent of other rows.
  std::vector<StateAccumulator> states;
  std::unordered_map<std::size_t, std::size_t> slot;
  for (const auto& seq : batch) {
    std::size_t ctx = params.context_index(seq.prompt);
    for (std::size_t t = 0; t < seq.response.size(); ++t) {
      const TokenId y = seq.response[t];
      const double w = seq.weights[t];
      if (w != 0.0) {
        auto [it, inserted] = slot.try_emplace(ctx, states.size());
        if (inserted) states.push_back({ctx, 0.0, std::vector<double>(v, 0.0)});
        StateAccumulator& acc = states[it->second];
        acc.total_weight += w;
        acc.token_weight[static_cast<std::size_t>(y)] += w;
      }
      ctx = params.advance(ctx, y);
    }
  }

  const auto n = static_cast<std::ptrdiff_t>(states.size());
#pragma omp parallel num_threads(resolve_workers(workers))
  {
    std::vector<double> lp(v);
#pragma omp for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      const StateAccumulator& acc = states[static_cast<std::size_t>(i)];
      policy::log_softmax(params.row(acc.context), 1.0, lp);
      double* g = grad.data() + acc.context * v;
      for (std::size_t j = 0; j < v; ++j)
        g[j] += acc.total_weight * std::exp(lp[j]) - acc.token_weight[j];
    }
  }
}

void adamw_step(std::span<double> params, std::span<double> m, std::span<double> v,
                std::span<const double> grad, const AdamWCoefficients& c, int workers) {
  const auto n = static_cast<std::ptrdiff_t>(params.size());
#pragma omp parallel for schedule(static) num_threads(resolve_workers(workers))
  for (std::ptrdiff_t s = 0; s < n; ++s) {
    const auto i = static_cast<std::size_t>(s);
    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * grad[i];
    v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
    const double m_hat = m[i] / c.bias_correction1;
    const double v_hat = v[i] / c.bias_correction2;
    params[i] -= c.lr * (m_hat / (std::sqrt(v_hat) + c.epsilon) + c.weight_decay * params[i]);
  }
}

std::vector<policy::Rollout> sample_batch(const PolicyParams& params,
                                          std::span<const SampleJob> jobs, int max_len,
                                          policy::SamplingParams sampling, int workers) {
  std::vector<policy::Rollout> out(jobs.size());
  ExceptionSlot errors;
  const auto n = static_cast<std::ptrdiff_t>(jobs.size());
#pragma omp parallel for schedule(dynamic, 16) num_threads(resolve_workers(workers))
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    errors.run([&] {
      const SampleJob& job = jobs[static_cast<std::size_t>(i)];
      out[static_cast<std::size_t>(i)] =
          policy::sample_response(params, job.prompt, max_len, sampling, job.seed);
    });
  }
  errors.rethrow();
  return out;
}

std::vector<double> reverse_kl(const PolicyParams& student, std::span<const KlJob> jobs,
                               int max_len, int workers) {
  const std::size_t v = static_cast<std::size_t>(student.vocab_size());
  std::vector<double> out(jobs.size(), 0.0);
  const auto n = static_cast<std::ptrdiff_t>(jobs.size());
#pragma omp parallel num_threads(resolve_workers(workers))
  {
    std::vector<double> lp(v), lq(v);
#pragma omp for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      const KlJob& job = jobs[static_cast<std::size_t>(i)];
      std::map<std::size_t, double> frontier{{student.context_index(job.prompt), 1.0}};
      double total = 0.0;
      for (int t = 0; t < max_len; ++t) {
        std::map<std::size_t, double> next;
        for (const auto& [ctx, mass] : frontier) {
          policy::log_softmax(student.row(ctx), 1.0, lp);
          policy::log_softmax(job.teacher->row(ctx), 1.0, lq);
          double kl = 0.0;
          for (std::size_t j = 0; j < v; ++j) kl += std::exp(lp[j]) * (lp[j] - lq[j]);
          total += mass * kl;
          if (t + 1 == max_len) continue;
          for (std::size_t j = 0; j < v; ++j) {
            if (static_cast<TokenId>(j) == policy::kEndToken) continue;
            next[student.advance(ctx, static_cast<TokenId>(j))] += mass * std::exp(lp[j]);
          }
        }
        frontier = std::move(next);
      }
      out[static_cast<std::size_t>(i)] = total;
    }
  }
  return out;
}

}  // namespace omp
}  // namespace cascade::kernels
