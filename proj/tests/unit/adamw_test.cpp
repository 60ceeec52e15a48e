#include <cmath>
#include <vector>

#include "doctest.h"
#include "sstune/adamw.hpp"
#include "sstune/error.hpp"

using namespace sstune;

TEST_CASE("zero gradient without decay leaves parameters alone") {
  auto state = OptimizerState::zeros(3);
  std::vector<double> p{1.0, -2.0, 0.5};
  const std::vector<double> g(3, 0.0);
  for (int i = 0; i < 5; ++i) adamw_step(state, p, g);
  CHECK(p == std::vector<double>{1.0, -2.0, 0.5});
  CHECK(state.step_count == 5);
}

TEST_CASE("first step closed form") {
  // m_hat = g and v_hat = g^2 after one step, so the update is
  // lr * (g / (|g| + eps) + wd * theta).
  AdamWOptions opt;
  opt.eps = 1e-12;
  opt.weight_decay = 0.01;
  auto state = OptimizerState::zeros(1, opt);
  std::vector<double> p{1.0};
  adamw_step(state, p, std::vector<double>{0.5});
  CHECK(p[0] == doctest::Approx(1.0 - 0.001 * (1.0 + 0.01)).epsilon(1e-12));
  CHECK(p[0] == doctest::Approx(0.99899).epsilon(1e-9));
}

TEST_CASE("first step moves against the gradient sign") {
  auto state = OptimizerState::zeros(4);
  std::vector<double> p{1.0, 1.0, 1.0, 1.0};
  adamw_step(state, p, std::vector<double>{3.0, -0.2, 1e-3, -50.0});
  CHECK(p[0] < 1.0);
  CHECK(p[1] > 1.0);
  CHECK(p[2] < 1.0);
  CHECK(p[3] > 1.0);
  // |g| >> eps: every coordinate moves by about lr.
  CHECK(std::abs(p[0] - 1.0) == doctest::Approx(1e-3).epsilon(1e-4));
  CHECK(std::abs(p[3] - 1.0) == doctest::Approx(1e-3).epsilon(1e-4));
}

TEST_CASE("bias correction over several steps") {
  AdamWOptions opt;
  opt.lr = 0.1;
  auto state = OptimizerState::zeros(1, opt);
  std::vector<double> p{0.0};
  double m = 0.0, v = 0.0, ref = 0.0;
  const double grads[] = {1.0, -0.5, 0.25, 2.0};
  for (int t = 1; t <= 4; ++t) {
    const double g = grads[t - 1];
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1.0 - std::pow(0.9, t));
    const double vh = v / (1.0 - std::pow(0.999, t));
    ref -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    adamw_step(state, p, std::vector<double>{g});
    CHECK(p[0] == doctest::Approx(ref).epsilon(1e-14));
  }
}

TEST_CASE("invalid inputs") {
  auto state = OptimizerState::zeros(2);
  std::vector<double> p{1.0, 1.0};
  CHECK_THROWS_AS(adamw_step(state, p, std::vector<double>{1.0}), Error);
  AdamWOptions bad;
  bad.beta1 = 1.0;
  CHECK_THROWS_AS(validate(bad), Error);
  bad = {};
  bad.lr = -1.0;
  CHECK_THROWS_AS(validate(bad), Error);
}
