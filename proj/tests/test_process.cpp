#include <cmath>

#include "doctest.h"

#include "b3d/core/error.hpp"
#include "b3d/diffusion/process.hpp"

using namespace b3d;
using Eigen::VectorXd;

TEST_SUITE("process") {
  const NoiseSchedule sched = build_schedule(ScheduleSpec{});

  TEST_CASE("t = 0 returns x0 exactly") {
    Rng rng = make_rng(1);
    const VectorXd x0 = standard_normal(16, rng), eps = standard_normal(16, rng);
    CHECK(forward_noise(x0, 0, eps, sched) == x0);
  }

  TEST_CASE("zero signal leaves scaled noise") {
    Rng rng = make_rng(2);
    const VectorXd eps = standard_normal(16, rng);
    for (int t : {1, 300, 1000}) {
      const VectorXd x = forward_noise(VectorXd::Zero(16), t, eps, sched);
      CHECK((x - std::sqrt(1.0 - sched.alpha_bar(t)) * eps).cwiseAbs().maxCoeff() <= 1e-15);
    }
  }

  TEST_CASE("forward_noise is linear in (x0, eps)") {
    Rng rng = make_rng(3);
    const VectorXd x0 = standard_normal(32, rng), eps = standard_normal(32, rng);
    for (double a : {-2.5, 0.0, 0.3, 7.0}) {
      const VectorXd lhs = forward_noise(a * x0, 417, a * eps, sched);
      const VectorXd rhs = a * forward_noise(x0, 417, eps, sched);
      CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + std::abs(a)));
    }
  }

  TEST_CASE("range and shape errors") {
    const VectorXd x = VectorXd::Zero(4);
    CHECK_THROWS_AS(forward_noise(x, -1, x, sched), RangeError);
    CHECK_THROWS_AS(forward_noise(x, 1001, x, sched), RangeError);
    CHECK_THROWS_AS(forward_noise(x, 5, VectorXd::Zero(3), sched), ShapeError);
    Rng rng = make_rng(0);
    CHECK_THROWS_AS(reverse_step(x, x, 0, sched, rng), RangeError);
    CHECK_THROWS_AS(reverse_step(x, x, 1001, sched, rng), RangeError);
  }

  TEST_CASE("Monte-Carlo moments of the forward process") {
    const VectorXd x0 = (VectorXd(4) << -1.0, -0.2, 0.5, 1.0).finished();
    const int n = 10000;
    for (int t : {1, 500, 1000}) {
      CAPTURE(t);
      Rng rng = make_rng(derive_seed(11, static_cast<std::uint64_t>(t)));
      VectorXd sum = VectorXd::Zero(4), sq = VectorXd::Zero(4);
      for (int i = 0; i < n; ++i) {
        const VectorXd x = forward_noise(x0, t, standard_normal(4, rng), sched);
        sum += x;
        sq += x.cwiseProduct(x);
      }
      const double var = 1.0 - sched.alpha_bar(t);
      for (int d = 0; d < 4; ++d) {
        const double mean = sum[d] / n;
        const double sample_var = (sq[d] - n * mean * mean) / (n - 1);
        CHECK(std::abs(mean - std::sqrt(sched.alpha_bar(t)) * x0[d]) <= 3.0 * std::sqrt(var / n));
        CHECK(std::abs(sample_var / var - 1.0) <= 0.05);
      }
    }
  }

  TEST_CASE("one step with the true noise gives the closed-form posterior mean") {
    Rng rng = make_rng(4);
    for (int t : {2, 10, 250, 999, 1000}) {
      const VectorXd x0 = standard_normal(16, rng), eps = standard_normal(16, rng);
      const VectorXd xt = forward_noise(x0, t, eps, sched);
      // x0-form of the DDPM posterior q(x_{t-1} | x_t, x0)
      const double ab = sched.alpha_bar(t), ab_prev = sched.alpha_bar(t - 1), beta = sched.beta(t);
      const VectorXd expected =
          (std::sqrt(ab_prev) * beta / (1.0 - ab)) * x0 + (std::sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab)) * xt;
      CHECK((reverse_mean(xt, eps, t, sched) - expected).cwiseAbs().maxCoeff() <= 1e-10);
    }
  }

  TEST_CASE("terminal step adds no noise") {
    Rng a = make_rng(5), b = make_rng(6);
    const VectorXd x = standard_normal(8, a), e = standard_normal(8, a);
    CHECK(reverse_step(x, e, 1, sched, a) == reverse_step(x, e, 1, sched, b));
    CHECK(reverse_step(x, e, 1, sched, a) == reverse_mean(x, e, 1, sched));
  }

  TEST_CASE("oracle noise predictor recovers x0") {
    Rng rng = make_rng(7);
    const VectorXd x0 = standard_normal(16, rng).cwiseMax(-1.0).cwiseMin(1.0);
    VectorXd x = forward_noise(x0, 1000, standard_normal(16, rng), sched);
    for (int t = 1000; t >= 1; --t) {
      const VectorXd eps_hat = (x - std::sqrt(sched.alpha_bar(t)) * x0) / std::sqrt(1.0 - sched.alpha_bar(t));
      x = reverse_step(x, eps_hat, t, sched, rng);
    }
    CHECK(std::sqrt((x - x0).squaredNorm() / 16.0) <= 1e-3);
  }

  TEST_CASE("oracle recovery on a respaced schedule") {
    const NoiseSchedule r = respace(sched, strided_timesteps(1000, 25));
    Rng rng = make_rng(8);
    const VectorXd x0 = standard_normal(16, rng).cwiseMax(-1.0).cwiseMin(1.0);
    VectorXd x = standard_normal(16, rng);
    for (int k = r.n_steps(); k >= 1; --k) {
      const VectorXd eps_hat = (x - std::sqrt(r.alpha_bar(k)) * x0) / std::sqrt(1.0 - r.alpha_bar(k));
      x = reverse_step(x, eps_hat, k, r, rng);
    }
    CHECK(std::sqrt((x - x0).squaredNorm() / 16.0) <= 1e-3);
  }

  TEST_CASE("clipped noise keeps in-range predictions and clips the rest") {
    Rng rng = make_rng(9);
    const int t = 400;
    const double sa = std::sqrt(sched.alpha_bar(t)), sn = std::sqrt(1.0 - sched.alpha_bar(t));
    const VectorXd eps = standard_normal(8, rng);
    VectorXd x0 = VectorXd::LinSpaced(8, -0.9, 0.9);
    VectorXd xt = sa * x0 + sn * eps;
    CHECK((clip_predicted_noise(xt, eps, t, sched) - eps).cwiseAbs().maxCoeff() <= 1e-12);
    x0[0] = -3.0;
    x0[7] = 2.0;
    xt = sa * x0 + sn * eps;
    const VectorXd implied = (xt - sn * clip_predicted_noise(xt, eps, t, sched)) / sa;
    CHECK(implied[0] == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(implied[7] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(implied[3] == doctest::Approx(x0[3]).epsilon(1e-12));
  }
}
