#pragma once

#include <Eigen/Core>

#include "b3d/core/rng.hpp"
#include "b3d/diffusion/schedule.hpp"

namespace b3d {

using Tensor = Eigen::VectorXd;
using TensorRef = Eigen::Ref<const Eigen::VectorXd>;

// sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps.
Tensor forward_noise(const TensorRef& x0, int t, const TensorRef& eps, const NoiseSchedule& schedule);

// DDPM posterior mean of x_{t-1} given x_t and the predicted noise.
Tensor reverse_mean(const TensorRef& x_t, const TensorRef& eps_hat, int t, const NoiseSchedule& schedule);

// Ancestral step x_t -> x_{t-1}; variance beta_t, no noise at t = 1.
Tensor reverse_step(const TensorRef& x_t, const TensorRef& eps_hat, int t, const NoiseSchedule& schedule, Rng& rng);

// Replaces eps_hat by the noise implied by the predicted x0 clipped to
// [-bound, bound]. Feeding the result to reverse_mean gives the usual
// clipped-x0 posterior mean.
Tensor clip_predicted_noise(const TensorRef& x_t, const TensorRef& eps_hat, int t, const NoiseSchedule& schedule,
                            double bound = 1.0);

Tensor standard_normal(Eigen::Index n, Rng& rng);

}  // namespace b3d
