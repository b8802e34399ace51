#include "b3d/diffusion/process.hpp"

#include <cmath>
#include <random>

#include <fmt/format.h>

#include "b3d/core/error.hpp"

namespace b3d {

Tensor forward_noise(const TensorRef& x0, int t, const TensorRef& eps, const NoiseSchedule& schedule) {
  if (t < 0 || t > schedule.n_steps())
    throw RangeError(fmt::format("forward_noise: t={} outside [0, {}]", t, schedule.n_steps()));
  if (x0.size() != eps.size())
    throw ShapeError(fmt::format("forward_noise: eps has {} elements, x0 has {}", eps.size(), x0.size()));
  const double ab = schedule.alpha_bar(t);
  if (t == 0) return x0;
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

Tensor reverse_mean(const TensorRef& x_t, const TensorRef& eps_hat, int t, const NoiseSchedule& schedule) {
  if (t < 1 || t > schedule.n_steps())
    throw RangeError(fmt::format("reverse_step: t={} outside [1, {}]", t, schedule.n_steps()));
  if (x_t.size() != eps_hat.size())
    throw ShapeError(fmt::format("reverse_step: eps_hat has {} elements, x_t has {}", eps_hat.size(), x_t.size()));
  const double beta = schedule.beta(t);
  const double alpha = 1.0 - beta;
  const double ab = schedule.alpha_bar(t);
  return (x_t - (beta / std::sqrt(1.0 - ab)) * eps_hat) / std::sqrt(alpha);
}

Tensor reverse_step(const TensorRef& x_t, const TensorRef& eps_hat, int t, const NoiseSchedule& schedule, Rng& rng) {
  Tensor mean = reverse_mean(x_t, eps_hat, t, schedule);
  if (t == 1) return mean;
  return mean + std::sqrt(schedule.beta(t)) * standard_normal(mean.size(), rng);
}

Tensor clip_predicted_noise(const TensorRef& x_t, const TensorRef& eps_hat, int t, const NoiseSchedule& schedule,
                            double bound) {
  if (t < 1 || t > schedule.n_steps())
    throw RangeError(fmt::format("clip_predicted_noise: t={} outside [1, {}]", t, schedule.n_steps()));
  const double ab = schedule.alpha_bar(t);
  const double sa = std::sqrt(ab), sn = std::sqrt(1.0 - ab);
  const Tensor x0 = ((x_t - sn * eps_hat) / sa).cwiseMax(-bound).cwiseMin(bound);
  return (x_t - sa * x0) / sn;
}

Tensor standard_normal(Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Tensor out(n);
  for (Eigen::Index i = 0; i < n; ++i) out[i] = dist(rng);
  return out;
}

}  // namespace b3d
