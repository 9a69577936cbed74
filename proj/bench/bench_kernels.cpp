// Serial reference kernels against their OpenMP counterparts on desk-scale workloads.

#include <benchmark/benchmark.h>

#include <vector>

#include "cascade/envs.hpp"
#include "cascade/kernels.hpp"
#include "cascade/policy.hpp"
#include "cascade/rng.hpp"

namespace {

using namespace cascade;

struct Fixture {
  std::vector<envs::Task> tasks;
  policy::PolicyParams student;
  policy::PolicyParams teacher;
  std::vector<kernels::SampleJob> sample_jobs;
  std::vector<kernels::KlJob> kl_jobs;
  std::vector<policy::Rollout> rollouts;
  std::vector<std::vector<double>> weights;
  std::vector<policy::WeightedSequence> batch;

  Fixture() {
    envs::EnvRegistry registry(0);
    tasks = envs::make_blend(registry, {{envs::Domain::math, 1.0}, {envs::Domain::code, 1.0}}, 256, 7);
    student = envs::make_initial_policy(tasks, {.answer_bias = 3.0});
    teacher = envs::make_initial_policy(tasks, {.answer_bias = 6.0, .seed = 1});
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      for (int j = 0; j < 16; ++j) sample_jobs.push_back({tasks[i].prompt, derive_seed(11, {i, static_cast<std::uint64_t>(j)})});
      if (i < 64) kl_jobs.push_back({tasks[i].prompt, &teacher});
    }
    rollouts = kernels::serial::sample_batch(student, sample_jobs, 6, {});
    Rng rng(3);
    for (const auto& r : rollouts) {
      std::vector<double> w(r.response.size());
      for (double& x : w) x = rng.normal();
      weights.push_back(std::move(w));
    }
    for (std::size_t i = 0; i < rollouts.size(); ++i)
      batch.push_back({rollouts[i].prompt, rollouts[i].response, weights[i]});
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

void BM_SampleSerial(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(kernels::serial::sample_batch(f.student, f.sample_jobs, 6, {}));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(f.sample_jobs.size()));
}

void BM_SampleOmp(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state)
    benchmark::DoNotOptimize(kernels::omp::sample_batch(f.student, f.sample_jobs, 6, {}, static_cast<int>(state.range(0))));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(f.sample_jobs.size()));
}

void BM_GradientSerial(benchmark::State& state) {
  const auto& f = fixture();
  policy::Gradient grad(f.student.num_params(), 0.0);
  for (auto _ : state) {
    kernels::serial::nll_gradient(f.student, f.batch, grad);
    benchmark::DoNotOptimize(grad.data());
  }
}

void BM_GradientOmp(benchmark::State& state) {
  const auto& f = fixture();
  policy::Gradient grad(f.student.num_params(), 0.0);
  for (auto _ : state) {
    kernels::omp::nll_gradient(f.student, f.batch, grad, static_cast<int>(state.range(0)));
    benchmark::DoNotOptimize(grad.data());
  }
}

void BM_AdamWSerial(benchmark::State& state) {
  const auto& f = fixture();
  std::vector<double> params(f.student.logits().begin(), f.student.logits().end());
  std::vector<double> m(params.size()), v(params.size()), g(params.size(), 1e-3);
  const kernels::AdamWCoefficients c{.lr = 1e-3};
  for (auto _ : state) {
    kernels::serial::adamw_step(params, m, v, g, c);
    benchmark::DoNotOptimize(params.data());
  }
}

void BM_AdamWOmp(benchmark::State& state) {
  const auto& f = fixture();
  std::vector<double> params(f.student.logits().begin(), f.student.logits().end());
  std::vector<double> m(params.size()), v(params.size()), g(params.size(), 1e-3);
  const kernels::AdamWCoefficients c{.lr = 1e-3};
  for (auto _ : state) {
    kernels::omp::adamw_step(params, m, v, g, c, static_cast<int>(state.range(0)));
    benchmark::DoNotOptimize(params.data());
  }
}

void BM_ReverseKlSerial(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(kernels::serial::reverse_kl(f.student, f.kl_jobs, 3));
}

void BM_ReverseKlOmp(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state)
    benchmark::DoNotOptimize(kernels::omp::reverse_kl(f.student, f.kl_jobs, 3, static_cast<int>(state.range(0))));
}

}  // namespace

BENCHMARK(BM_SampleSerial)->UseRealTime()->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SampleOmp)->Arg(1)->Arg(2)->Arg(4)->Arg(0)->UseRealTime()->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GradientSerial)->UseRealTime()->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GradientOmp)->Arg(1)->Arg(2)->Arg(4)->Arg(0)->UseRealTime()->Unit(benchmark::kMillisecond);
BENCHMARK(BM_AdamWSerial)->UseRealTime()->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_AdamWOmp)->Arg(1)->Arg(2)->Arg(4)->Arg(0)->UseRealTime()->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ReverseKlSerial)->UseRealTime()->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ReverseKlOmp)->Arg(1)->Arg(2)->Arg(4)->Arg(0)->UseRealTime()->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
