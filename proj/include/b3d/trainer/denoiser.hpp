#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "b3d/core/rng.hpp"
#include "b3d/diffusion/policy.hpp"
#include "b3d/diffusion/schedule.hpp"

namespace b3d {

struct DenoiserConfig {
  int view_size = 16;
  int hidden = 256;
  int time_dim = 32;  // even
  int cond_dim = 16;
  int n_conditions = 24;
  bool zero_head = true;  // head (w3, b3, skip) starts at zero
  double init_scale = 1.0;

  // 2x2 grid of RGB views.
  int input_dim() const noexcept { return 3 * 4 * view_size * view_size; }
  friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

// eps_hat = g(t) (W3 h2 + b3) - m(t) mean[:, c] + sum_k (skip_k . temb(t)) * shift_k(x_t)
//   h2 = silu(W2 h1 + b2),  h1 = silu(W1 [x_t; temb(t); cond(c)] + b1)
// shift_k moves x_t by one of the 3x3 neighbour offsets inside each view
// (edges clamped), so the skip path is a time-gated local filter: enough
// to strip pixel noise at small t, which a bottleneck MLP does poorly.
// With a schedule attached g = sqrt(ab_t) and m = sqrt(ab_t (1 - ab_t)), the
// weights a Gaussian posterior puts on its mean; without one both are 1.
// `mean` is a per-condition image, so the coarse layout that decides the
// first sampling steps is a linear fit rather than something the hidden
// layers must extrapolate to near-pure noise.
// skip, w3, b3 and mean form the head: a zero head yields eps_hat = 0.
inline constexpr int kSkipTaps = 9;
inline constexpr int kCentreTap = 4;

struct DenoiserParams {
  enum Slot : std::size_t { w1, b1, w2, b2, w3, b3, skip, cond, mean, kSlots };
  static constexpr std::array<std::string_view, kSlots> kNames = {"w1", "b1",   "w2",   "b2",  "w3",
                                                                  "b3", "skip", "cond", "mean"};

  DenoiserConfig config;
  std::array<Eigen::MatrixXd, kSlots> tensors;
  // Indexed by t; not trained, rebuilt from the schedule.
  std::vector<double> head_scale, mean_scale;

  void attach_schedule(const NoiseSchedule& schedule);

  Eigen::MatrixXd& operator[](Slot s) { return tensors[s]; }
  const Eigen::MatrixXd& operator[](Slot s) const { return tensors[s]; }

  // Tensor shapes implied by a config, in slot order.
  static std::array<std::pair<Eigen::Index, Eigen::Index>, kSlots> shapes(const DenoiserConfig& config);

  std::size_t parameter_count() const;
  // Same topology, all zeros.
  DenoiserParams zeros_like() const;
  bool all_finite() const;

  friend bool operator==(const DenoiserParams&, const DenoiserParams&) = default;
};

// Without a schedule the head is unscaled.
DenoiserParams init_params(const DenoiserConfig& config, Rng& rng);
DenoiserParams init_params(const DenoiserConfig& config, const NoiseSchedule& schedule, Rng& rng);

// Sinusoidal embedding of an integer timestep, length `dim`.
Eigen::VectorXd time_embedding(int t, int dim);

// x_t is input_dim x batch; one timestep and condition per column.
Eigen::MatrixXd denoiser_forward(const DenoiserParams& params, const Eigen::MatrixXd& x_t, std::span<const int> t,
                                 std::span<const int> cond);
Eigen::VectorXd denoiser_forward(const DenoiserParams& params, const Eigen::VectorXd& x_t, int t, int cond);

// A fixed training batch: clean grids, their noise draws and timesteps.
struct TrainingBatch {
  Eigen::MatrixXd x0;   // input_dim x B, model space
  Eigen::MatrixXd eps;  // input_dim x B
  std::vector<int> t;
  std::vector<int> cond;
  std::vector<DataSource> source;

  std::size_t size() const noexcept { return t.size(); }
};

struct BackwardResult {
  double loss = 0.0;                // mean squared error over batch and elements
  std::vector<double> item_loss;    // per item, mean over elements
  DenoiserParams grad;
};

// Items whose timestep the policy does not allow raise PolicyError.
BackwardResult denoiser_backward(const DenoiserParams& params, const TrainingBatch& batch,
                                 const NoiseSchedule& schedule, const TimestepPolicy& policy);

// Loss only; used by finite-difference checks.
double denoiser_loss(const DenoiserParams& params, const TrainingBatch& batch, const NoiseSchedule& schedule);

}  // namespace b3d
