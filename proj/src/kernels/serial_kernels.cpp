#include <cmath>
#include <map>

#include "cascade/kernels.hpp"

namespace cascade::kernels::serial {

using policy::Gradient;
using policy::PolicyParams;
using policy::TokenId;

void nll_gradient(const PolicyParams& params, std::span<const policy::WeightedSequence> batch,
                  Gradient& grad) {
  const std::size_t v = static_cast<std::size_t>(params.vocab_size());
  std::vector<double> lp(v);
  for (const auto& seq : batch) {
    std::size_t ctx = params.context_index(seq.prompt);
    for (std::size_t t = 0; t < seq.response.size(); ++t) {
      const TokenId y = seq.response[t];
      const double w = seq.weights[t];
      if (w != 0.0) {
        policy::log_softmax(params.row(ctx), 1.0, lp);
        double* g = grad.data() + ctx * v;
        for (std::size_t j = 0; j < v; ++j) g[j] += w * std::exp(lp[j]);
        g[static_cast<std::size_t>(y)] -= w;
      }
      ctx = params.advance(ctx, y);
    }
  }
}

void adamw_step(std::span<double> params, std::span<double> m, std::span<double> v,
                std::span<const double> grad, const AdamWCoefficients& c) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * grad[i];
    v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
    const double m_hat = m[i] / c.bias_correction1;
    const double v_hat = v[i] / c.bias_correction2;
    params[i] -= c.lr * (m_hat / (std::sqrt(v_hat) + c.epsilon) + c.weight_decay * params[i]);
  }
}

std::vector<policy::Rollout> sample_batch(const PolicyParams& params,
                                          std::span<const SampleJob> jobs, int max_len,
                                          policy::SamplingParams sampling) {
  std::vector<policy::Rollout> out;
  out.reserve(jobs.size());
  for (const SampleJob& job : jobs)
    out.push_back(policy::sample_response(params, job.prompt, max_len, sampling, job.seed));
  return out;
}

std::vector<double> reverse_kl(const PolicyParams& student, std::span<const KlJob> jobs,
                               int max_len) {
  const std::size_t v = static_cast<std::size_t>(student.vocab_size());
  std::vector<double> lp(v), lq(v);
  std::vector<double> out;
  out.reserve(jobs.size());
  for (const KlJob& job : jobs) {
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
    out.push_back(total);
  }
  return out;
}

}  // namespace cascade::kernels::serial
