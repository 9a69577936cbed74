#include <doctest.h>

#include <cmath>
#include <limits>

#include "cascade/errors.hpp"
#include "cascade/optimizer.hpp"
#include "cascade/stage_config.hpp"
#include "test_util.hpp"

using namespace cascade;
using namespace cascade::policy;

TEST_CASE("zero learning rate leaves params but moves the moments") {
  auto p = test::random_policy(4, 1, 1, 1.0);
  const auto before = p;
  OptimizerState s(p, {});
  std::vector<double> g(p.num_params(), 0.5);
  adamw_update(p, s, g, 0.0);
  CHECK(p == before);
  CHECK(s.step_count == 1);
  CHECK(s.first_moment[0] == doctest::Approx(0.05));
  CHECK(s.second_moment[0] == doctest::Approx(0.05 * 0.25));
}

TEST_CASE("zero gradient with no weight decay is the identity") {
  auto p = test::random_policy(4, 1, 2, 1.0);
  const auto before = p;
  OptimizerState s(p, {});
  const std::vector<double> g(p.num_params(), 0.0);
  for (int i = 0; i < 5; ++i) adamw_update(p, s, g, 1e-2);
  CHECK(p.logits() == before.logits());
  CHECK(s.step_count == 5);
}

TEST_CASE("single step matches the closed form") {
  auto p = test::random_policy(3, 0, 3, 1.0);
  const auto before = p;
  OptimizerState s(p, {0.9, 0.95, 0.0, 1e-8});
  const std::vector<double> g{0.3, -2.0, 1e-3};
  const double lr = 1e-2;
  adamw_update(p, s, g, lr);
  for (std::size_t i = 0; i < 3; ++i) {
    // m_hat = g, v_hat = g^2 after bias correction.
    const double step = lr * g[i] / (std::abs(g[i]) + 1e-8);
    CHECK(p.logits()[i] == doctest::Approx(before.logits()[i] - step).epsilon(1e-12));
    CHECK((p.logits()[i] - before.logits()[i]) * g[i] < 0.0);
  }
}

TEST_CASE("decoupled weight decay shrinks params with zero gradient") {
  auto p = test::random_policy(3, 0, 4, 1.0);
  const auto before = p;
  OptimizerState s(p, {0.9, 0.95, 0.1, 1e-8});
  adamw_update(p, s, std::vector<double>(3, 0.0), 0.5);
  for (std::size_t i = 0; i < 3; ++i) CHECK(p.logits()[i] == doctest::Approx(before.logits()[i] * (1.0 - 0.05)));
}

TEST_CASE("non-finite gradient reports its index and leaves state untouched") {
  auto p = test::random_policy(4, 0, 5, 1.0);
  const auto before = p;
  OptimizerState s(p, {});
  std::vector<double> g(4, 0.1);
  g[2] = std::numeric_limits<double>::quiet_NaN();
  try {
    adamw_update(p, s, g, 1e-3);
    FAIL("expected NumericFault");
  } catch (const NumericFault& e) {
    CHECK(e.index() == 2);
  }
  CHECK(p == before);
  CHECK(s.step_count == 0);
  g[2] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(adamw_update(p, s, g, 1e-3), NumericFault);
  CHECK_THROWS_AS(adamw_update(p, s, std::vector<double>(4, 0.0), -1.0), InvalidArgument);
  CHECK_THROWS_AS(adamw_update(p, s, std::vector<double>(3, 0.0), 1.0), InvalidArgument);
}

TEST_CASE("stage defaults carry the optimizer settings") {
  const stage::StageConfig c;
  CHECK(c.beta1 == 0.9);
  CHECK(c.beta2 == 0.95);
  CHECK(c.lr == 3e-6);
  const auto cfg = stage::optimizer_config(c);
  CHECK(cfg.beta1 == 0.9);
  CHECK(cfg.beta2 == 0.95);
}
