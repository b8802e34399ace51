#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "b3d/core/record.hpp"
#include "b3d/diffusion/policy.hpp"
#include "b3d/diffusion/schedule.hpp"
#include "b3d/trainer/denoiser.hpp"

namespace b3d {

struct TrainConfig {
  DenoiserConfig model;
  ScheduleSpec schedule;
  TimestepPolicy policy = default_policy();
  std::map<DataSource, double> source_mix = {{DataSource::rendered_asset, 1.0}};
  int batch_size = 32;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double grad_clip = 0.0;  // global gradient-norm clip; 0 disables
  // Extra step-size factor for the per-pixel head tensors (w3, b3, mean).
  // The loss averages over every pixel, so their gradients are ~1/input_dim
  // the size of the hidden-layer ones. `mean` also gets n_conditions.
  double head_lr_multiplier = 100.0;
  int total_steps = 5000;
  std::uint64_t seed = 0;

  // Mix proportions sum to 1 +- 1e-9, batch_size >= 1, policy valid and
  // covering every mixed source. Throws ConfigError.
  void validate() const;
};

struct TrainExample {
  Eigen::VectorXd x0;  // model space, [-1,1]
  int condition = 0;
};

using TrainingSet = std::map<DataSource, std::vector<TrainExample>>;

// Grid pixels -> model space ([0,255] -> [-1,1]), HWC order.
Eigen::VectorXd grid_to_tensor(const Image& grid);
// Image-space tensor ([0,1]) -> 8-bit grid.
Image tensor_to_grid(const Eigen::VectorXd& x, int view_size);

// Uses meta.scene for the condition index.
TrainExample make_example(const MultiViewRecord& record);
TrainingSet partition_by_source(std::span<const MultiViewRecord> records);

struct LossPoint {
  int step = 0;
  double loss = 0.0;
  friend bool operator==(const LossPoint&, const LossPoint&) = default;
};

struct TimestepDraw {
  int step = 0;
  DataSource source = DataSource::rendered_asset;
  int t = 0;
};

struct Checkpoint {
  DenoiserParams params;
  ScheduleSpec schedule;
  int step = 0;
  std::uint64_t seed = 0;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossPoint> loss;  // whole batch, every step
  std::map<DataSource, std::vector<LossPoint>> loss_by_source;
  std::vector<TimestepDraw> timestep_log;
};

using StepCallback = std::function<void(int step, double loss)>;

// Momentum SGD for total_steps. Timesteps come from sample_timestep with
// t = 0 redrawn (it carries no training signal). Fully determined by
// config.seed.
TrainResult train(const TrainConfig& config, const TrainingSet& data, const StepCallback& on_step = {});

// Step-size factor applied to one parameter slot.
double slot_lr_multiplier(const TrainConfig& config, DenoiserParams::Slot slot);

// The parameters train() starts from.
DenoiserParams initial_params(const TrainConfig& config);

struct GenerateOptions {
  bool clip_x0 = true;      // clip each step's predicted x0 to [-1,1]
  bool clip_output = true;  // clip the returned image to [0,1]
};

// Ancestral sampling from unit Gaussian noise over n_reverse_steps evenly
// strided timesteps. Returns input_dim x conds.size() in image space.
Eigen::MatrixXd generate(const Checkpoint& checkpoint, std::span<const int> conds, int n_reverse_steps, Rng& rng,
                         const GenerateOptions& options = {});
Eigen::VectorXd generate(const Checkpoint& checkpoint, int cond, int n_reverse_steps, Rng& rng,
                         const GenerateOptions& options = {});

}  // namespace b3d
