#include "cascade/envs.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <set>

#include <nlohmann/json.hpp>

#include "cascade/errors.hpp"
#include "cascade/kernels.hpp"
#include "cascade/rng.hpp"

namespace cascade::envs {

namespace {

constexpr std::string_view kDomainNames[] = {"math", "code",  "instruction", "mcqa",
                                             "tool", "rlhf",  "longctx"};

std::string id_of(Domain d, std::initializer_list<int> parts) {
  std::string id(to_string(d));
  for (int p : parts) id += "-" + std::to_string(p);
  return id;
}

}  // namespace

std::string_view to_string(Domain d) { return kDomainNames[static_cast<std::size_t>(d)]; }

Domain parse_domain(std::string_view tag) {
  for (Domain d : kAllDomains)
    if (to_string(d) == tag) return d;
  throw InvalidArgument("unknown domain tag '" + std::string(tag) + "'");
}

std::optional<TokenId> tokens::chat_marker(std::string_view text) {
  if (text == "<think>") return kThinkOpen;
  if (text == "</think>") return kThinkClose;
  if (text == "<tool_call>") return kToolCallOpen;
  if (text == "</tool_call>") return kToolCallClose;
  return std::nullopt;
}

std::span<const TokenId> response_body(std::span<const TokenId> response) {
  const auto end = std::find(response.begin(), response.end(), tokens::kEnd);
  return response.first(static_cast<std::size_t>(end - response.begin()));
}

bool has_unique_answer(Domain d) { return d != Domain::instruction && d != Domain::rlhf; }

double verify(const Task& task, std::span<const TokenId> response) {
  const auto body = response_body(response);
  const auto contains = [&](TokenId t) { return std::find(body.begin(), body.end(), t) != body.end(); };
  switch (task.domain) {
    case Domain::math:
    case Domain::code:
    case Domain::mcqa:
    case Domain::tool:
    case Domain::longctx:
      return std::ranges::equal(body, task.verifier.expected) ? 1.0 : 0.0;
    case Domain::instruction:
      return static_cast<int>(body.size()) <= task.verifier.max_tokens &&
                     contains(task.verifier.required)
                 ? 1.0
                 : 0.0;
    case Domain::rlhf:
      return contains(task.verifier.required) ? 1.0 : 0.0;
  }
  throw InvalidArgument("unknown domain tag");
}

std::vector<TokenId> reference_body(const Task& task) {
  if (has_unique_answer(task.domain)) return task.verifier.expected;
  return {task.verifier.required};
}

std::vector<Task> make_domain_tasks(Domain d, std::uint64_t seed) {
  using namespace tokens;
  std::vector<Task> out;
  const TokenId mark = marker(d);
  switch (d) {
    case Domain::math:
      for (int a = 0; a < 10; ++a)
        for (int b = 0; b < 10; ++b)
          out.push_back({id_of(d, {a, b}), d, {digit(a), digit(b), mark},
                         {{digit((a + b) % 10)}, -1, -1}});
      break;
    case Domain::code:
      for (int x = 0; x < kNumLetters; ++x)
        for (int y = 0; y < kNumLetters; ++y)
          out.push_back({id_of(d, {x, y}), d, {letter(x), letter(y), mark},
                         {{letter(y), letter(x)}, -1, -1}});
      break;
    case Domain::instruction:
      for (int n = 1; n <= 5; ++n)
        for (int c = 0; c < 10; ++c)
          out.push_back({id_of(d, {n, c}), d, {digit(n), digit(c), mark}, {{}, n, digit(c)}});
      break;
    case Domain::mcqa:
      for (int x = 0; x < 10; ++x)
        for (int y = 0; y < 10; ++y)
          out.push_back({id_of(d, {x, y}), d, {digit(x), digit(y), mark},
                         {{letter((3 * x + y) % 4)}, -1, -1}});
      break;
    case Domain::tool:
      for (int f = 0; f < kNumLetters; ++f)
        for (int a = 0; a < 10; ++a)
          out.push_back({id_of(d, {f, a}), d, {letter(f), digit(a), mark},
                         {{letter(f), digit(a)}, -1, -1}});
      break;
    case Domain::rlhf:
      for (int t = 0; t < 10 + kNumLetters; ++t) {
        const TokenId topic = t < 10 ? digit(t) : letter(t - 10);
        out.push_back({id_of(d, {t}), d, {topic, mark}, {{}, -1, topic}});
      }
      break;
    case Domain::longctx: {
      Rng rng(derive_seed(seed, {0x10C7}));
      for (int n = 0; n < 10; ++n)
        for (int variant = 0; variant < 4; ++variant) {
          std::vector<TokenId> prompt{mark};
          for (int i = 0; i < 6; ++i)
            prompt.push_back(letter(static_cast<int>(rng.below(kNumLetters))));
          prompt.push_back(digit(n));
          prompt.push_back(mark);
          out.push_back({id_of(d, {n, variant}), d, std::move(prompt), {{digit(n)}, -1, -1}});
        }
      break;
    }
  }
  return out;
}

EnvRegistry::EnvRegistry(std::uint64_t seed) {
  for (Domain d : kAllDomains) pools_[d] = make_domain_tasks(d, seed);
}

EnvRegistry::EnvRegistry(std::map<Domain, std::vector<Task>> pools) : pools_(std::move(pools)) {
  for (const auto& [domain, tasks] : pools_)
    for (const Task& t : tasks) {
      if (t.prompt.empty()) throw InvalidArgument("task " + t.task_id + " has an empty prompt");
      if (t.domain != domain)
        throw InvalidArgument("task " + t.task_id + " registered under the wrong domain");
    }
}

EnvRegistry::EnvRegistry(const EnvRegistry& other) {
  std::lock_guard lock(other.mu_);
  pools_ = other.pools_;
  active_stage_ = other.active_stage_;
  log_ = other.log_;
}

bool EnvRegistry::has_domain(Domain d) const { return pools_.contains(d); }

std::span<const Task> EnvRegistry::train_pool(Domain d) const {
  const auto it = pools_.find(d);
  if (it == pools_.end())
    throw InvalidArgument("domain '" + std::string(to_string(d)) + "' is not registered");
  std::lock_guard lock(mu_);
  Access rec{active_stage_, d};
  if (log_.empty() || !(log_.back() == rec)) log_.push_back(std::move(rec));
  return it->second;
}

std::span<const Task> EnvRegistry::validation_pool(Domain d) const {
  const auto it = pools_.find(d);
  if (it == pools_.end())
    throw InvalidArgument("domain '" + std::string(to_string(d)) + "' is not registered");
  return it->second;
}

void EnvRegistry::replace_pool(Domain d, std::vector<Task> tasks) { pools_[d] = std::move(tasks); }

void EnvRegistry::set_active_stage(std::string stage) const {
  std::lock_guard lock(mu_);
  active_stage_ = std::move(stage);
}

std::vector<EnvRegistry::Access> EnvRegistry::access_log() const {
  std::lock_guard lock(mu_);
  return log_;
}

void EnvRegistry::clear_access_log() const {
  std::lock_guard lock(mu_);
  log_.clear();
}

std::vector<Task> make_blend(const EnvRegistry& registry, const std::map<Domain, double>& weights,
                             int n, std::uint64_t seed) {
  if (n < 0) throw InvalidArgument("blend size must be non-negative");
  double total = 0.0;
  for (const auto& [d, w] : weights) {
    if (!(w >= 0.0) || !std::isfinite(w))
      throw InvalidArgument("blend weight for " + std::string(to_string(d)) + " is negative");
    total += w;
  }
  if (!(total > 0.0)) throw InvalidArgument("blend weights must sum to a positive value");

  std::vector<std::pair<Domain, std::span<const Task>>> pools;
  std::vector<double> cumulative;
  double acc = 0.0;
  for (const auto& [d, w] : weights) {
    if (w == 0.0) continue;
    auto pool = registry.train_pool(d);
    if (pool.empty())
      throw InvalidState("domain pool '" + std::string(to_string(d)) + "' is empty");
    acc += w / total;
    pools.emplace_back(d, pool);
    cumulative.push_back(acc);
  }

  Rng rng(derive_seed(seed, {0xB1E7D}));
  std::vector<Task> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    std::size_t k = 0;
    while (k + 1 < cumulative.size() && u >= cumulative[k]) ++k;
    const auto& pool = pools[k].second;
    out.push_back(pool[rng.below(pool.size())]);
  }
  return out;
}

void write_task_corpus(std::ostream& out, std::span<const Task> tasks) {
  for (const Task& t : tasks) {
    nlohmann::json j;
    j["task_id"] = t.task_id;
    j["domain"] = std::string(to_string(t.domain));
    j["prompt"] = t.prompt;
    j["expected"] = t.verifier.expected;
    j["max_tokens"] = t.verifier.max_tokens;
    j["required"] = t.verifier.required;
    out << j.dump() << '\n';
  }
}

std::vector<Task> read_task_corpus(std::istream& in) {
  std::vector<Task> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Task t;
      t.task_id = j.at("task_id").get<std::string>();
      t.domain = parse_domain(j.at("domain").get<std::string>());
      t.prompt = j.at("prompt").get<std::vector<TokenId>>();
      t.verifier.expected = j.value("expected", std::vector<TokenId>{});
      t.verifier.max_tokens = j.value("max_tokens", -1);
      t.verifier.required = j.value("required", -1);
      if (t.prompt.empty()) throw InvalidArgument("empty prompt");
      out.push_back(std::move(t));
    } catch (const std::exception& e) {
      throw InvalidArgument("task corpus line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

policy::PolicyParams make_initial_policy(std::span<const Task> tasks,
                                         const InitialPolicyOptions& options) {
  policy::PolicyParams params(options.vocab_size, options.context_order, options.version_tag);
  if (options.noise > 0.0) {
    Rng rng(derive_seed(options.seed, {0x1217}));
    for (double& z : params.logits()) z = options.noise * rng.normal();
  }
  std::set<std::pair<std::size_t, TokenId>> bumped;
  for (const Task& task : tasks) {
    std::size_t ctx = params.context_index(task.prompt);
    auto path = reference_body(task);
    path.push_back(tokens::kEnd);
    for (TokenId y : path) {
      params.check_token(y);
      bumped.emplace(ctx, y);
      ctx = params.advance(ctx, y);
    }
  }
  for (const auto& [ctx, y] : bumped) params.row(ctx)[static_cast<std::size_t>(y)] += options.answer_bias;
  return params;
}

double exact_success_probability(const policy::PolicyParams& params, const Task& task,
                                 int max_len) {
  const auto body = reference_body(task);
  if (static_cast<int>(body.size()) > max_len) return 0.0;
  std::vector<TokenId> path = body;
  // A body that exactly fills max_len is accepted even without the end token.
  if (static_cast<int>(body.size()) < max_len) path.push_back(tokens::kEnd);
  const auto lps = policy::sequence_logprobs(params, task.prompt, path);
  double sum = 0.0;
  for (double lp : lps) sum += lp;
  return std::exp(sum);
}

double exact_mean_reward(const policy::PolicyParams& params, std::span<const Task> tasks,
                         int max_len) {
  if (tasks.empty()) return 0.0;
  double total = 0.0;
  for (const Task& t : tasks) {
    if (!has_unique_answer(t.domain))
      throw InvalidArgument("exact reward needs a unique-answer domain, got " +
                            std::string(to_string(t.domain)));
    total += exact_success_probability(params, t, max_len);
  }
  return total / static_cast<double>(tasks.size());
}

double sampled_mean_reward(const policy::PolicyParams& params, std::span<const Task> tasks,
                           int max_len, int samples_per_task, std::uint64_t seed, int workers) {
  if (tasks.empty() || samples_per_task < 1) return 0.0;
  std::vector<kernels::SampleJob> jobs;
  jobs.reserve(tasks.size() * static_cast<std::size_t>(samples_per_task));
  for (std::size_t i = 0; i < tasks.size(); ++i)
    for (int s = 0; s < samples_per_task; ++s)
      jobs.push_back({tasks[i].prompt, derive_seed(seed, {i, static_cast<std::uint64_t>(s)})});
  const auto rollouts = kernels::omp::sample_batch(params, jobs, max_len, {}, workers);
  double total = 0.0;
  for (std::size_t k = 0; k < rollouts.size(); ++k)
    total += verify(tasks[k / static_cast<std::size_t>(samples_per_task)], rollouts[k].response);
  return total / static_cast<double>(rollouts.size());
}

}  // namespace cascade::envs
