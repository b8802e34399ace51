#include "b3d/trainer/train.hpp"

#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "b3d/core/error.hpp"
#include "b3d/diffusion/process.hpp"
#include "b3d/trainer/scene.hpp"

namespace b3d {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError(fmt::format("trainer.batch_size must be >= 1 (got {})", batch_size));
  if (total_steps < 0) throw ConfigError(fmt::format("trainer.total_steps must be >= 0 (got {})", total_steps));
  if (!(learning_rate > 0)) throw ConfigError("trainer.learning_rate must be positive");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("trainer.momentum must lie in [0,1)");
  if (!(head_lr_multiplier > 0)) throw ConfigError("trainer.head_lr_multiplier must be positive");
  double total = 0;
  for (const auto& [source, w] : source_mix) {
    if (w < 0) throw ConfigError(fmt::format("trainer.source_mix.{} is negative", to_string(source)));
    total += w;
    if (w > 0 && !policy.contains(source))
      throw ConfigError(fmt::format("timestep policy has no entry for mixed source {}", to_string(source)));
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError(fmt::format("trainer.source_mix sums to {}, expected 1", total));
  const auto v = validate_policy(policy, schedule.n_steps);
  if (!v.ok()) throw ConfigError(fmt::format("invalid timestep policy: {}", fmt::join(v.violations, "; ")));
}

Eigen::VectorXd grid_to_tensor(const Image& grid) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(grid.pixels.size()));
  for (std::size_t i = 0; i < grid.pixels.size(); ++i) x[static_cast<Eigen::Index>(i)] = grid.pixels[i] / 127.5 - 1.0;
  return x;
}

Image tensor_to_grid(const Eigen::VectorXd& x, int view_size) {
  ImageF f(2 * view_size, 2 * view_size);
  if (static_cast<std::size_t>(x.size()) != f.data.size())
    throw ShapeError(fmt::format("tensor has {} elements, grid needs {}", x.size(), f.data.size()));
  for (std::size_t i = 0; i < f.data.size(); ++i) f.data[i] = x[static_cast<Eigen::Index>(i)];
  return to_u8(f);
}

TrainExample make_example(const MultiViewRecord& record) {
  if (!record.meta.contains("scene")) throw ParameterError(fmt::format("record {} carries no scene metadata", record.record_id));
  const Image grid = record.grid.empty() ? assemble_grid(record.views) : record.grid;
  return TrainExample{grid_to_tensor(grid), scene_from_json(record.meta["scene"]).condition()};
}

TrainingSet partition_by_source(std::span<const MultiViewRecord> records) {
  TrainingSet out;
  for (const auto& r : records) out[r.source].push_back(make_example(r));
  return out;
}

double slot_lr_multiplier(const TrainConfig& config, DenoiserParams::Slot slot) {
  switch (slot) {
    case DenoiserParams::w3:
    case DenoiserParams::b3:
      return config.head_lr_multiplier;
    case DenoiserParams::mean:
      // each column only sees its own condition's share of the batch
      return config.head_lr_multiplier * config.model.n_conditions;
    case DenoiserParams::skip:
      // the nine shifted copies are nearly collinear; this keeps the step
      // where a single gate would be
      return 1.0 / kSkipTaps;
    default:
      return 1.0;
  }
}

DenoiserParams initial_params(const TrainConfig& config) {
  Rng rng = make_rng(derive_seed(config.seed, hash_string("init")));
  return init_params(config.model, build_schedule(config.schedule), rng);
}

TrainResult train(const TrainConfig& config, const TrainingSet& data, const StepCallback& on_step) {
  config.validate();
  std::vector<DataSource> sources;
  std::vector<double> cumulative;
  double acc = 0;
  for (const auto& [source, w] : config.source_mix) {
    if (w <= 0) continue;
    auto it = data.find(source);
    if (it == data.end() || it->second.empty())
      throw ConfigError(fmt::format("source {} has mix weight {} but no training data", to_string(source), w));
    for (const auto& ex : it->second)
      if (ex.x0.size() != config.model.input_dim())
        throw ShapeError(fmt::format("{} example has {} elements, model expects {}", to_string(source), ex.x0.size(),
                                     config.model.input_dim()));
    acc += w;
    sources.push_back(source);
    cumulative.push_back(acc);
  }

  const NoiseSchedule schedule = build_schedule(config.schedule);
  Rng data_rng = make_rng(derive_seed(config.seed, hash_string("data")));

  TrainResult res;
  res.checkpoint.params = initial_params(config);
  res.checkpoint.schedule = config.schedule;
  res.checkpoint.seed = config.seed;
  DenoiserParams& params = res.checkpoint.params;
  DenoiserParams velocity = params.zeros_like();

  const int D = config.model.input_dim();
  const int B = config.batch_size;
  TrainingBatch batch;
  batch.x0.resize(D, B);
  batch.eps.resize(D, B);
  batch.t.resize(static_cast<std::size_t>(B));
  batch.cond.resize(static_cast<std::size_t>(B));
  batch.source.resize(static_cast<std::size_t>(B));

  for (int step = 1; step <= config.total_steps; ++step) {
    for (int b = 0; b < B; ++b) {
      const double u = uniform01(data_rng) * acc;
      std::size_t k = 0;
      while (k + 1 < cumulative.size() && u >= cumulative[k]) ++k;
      const DataSource source = sources[k];
      const auto& pool = data.at(source);
      const auto& ex = pool[static_cast<std::size_t>(uniform_int(data_rng, 0, static_cast<std::int64_t>(pool.size()) - 1))];
      int t = 0;
      do {
        t = sample_timestep(config.policy, source, data_rng);
      } while (t == 0);
      const auto ub = static_cast<std::size_t>(b);
      batch.x0.col(b) = ex.x0;
      batch.eps.col(b) = standard_normal(D, data_rng);
      batch.t[ub] = t;
      batch.cond[ub] = ex.condition;
      batch.source[ub] = source;
      res.timestep_log.push_back({step, source, t});
    }

    BackwardResult br = denoiser_backward(params, batch, schedule, config.policy);
    if (config.grad_clip > 0) {
      double sq = 0;
      for (const auto& g : br.grad.tensors) sq += g.squaredNorm();
      const double norm = std::sqrt(sq);
      if (norm > config.grad_clip)
        for (auto& g : br.grad.tensors) g *= config.grad_clip / norm;
    }
    for (std::size_t i = 0; i < DenoiserParams::kSlots; ++i) {
      const double lr = config.learning_rate * slot_lr_multiplier(config, static_cast<DenoiserParams::Slot>(i));
      velocity.tensors[i] = config.momentum * velocity.tensors[i] + br.grad.tensors[i];
      params.tensors[i] -= lr * velocity.tensors[i];
    }

    res.loss.push_back({step, br.loss});
    std::map<DataSource, std::pair<double, int>> per_source;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      auto& e = per_source[batch.source[i]];
      e.first += br.item_loss[i];
      e.second += 1;
    }
    for (const auto& [source, e] : per_source) res.loss_by_source[source].push_back({step, e.first / e.second});
    if (on_step) on_step(step, br.loss);
  }
  res.checkpoint.step = config.total_steps;
  if (!params.all_finite()) throw RangeError("training diverged: non-finite parameters");
  return res;
}

Eigen::MatrixXd generate(const Checkpoint& checkpoint, std::span<const int> conds, int n_reverse_steps, Rng& rng,
                         const GenerateOptions& options) {
  const NoiseSchedule full = build_schedule(checkpoint.schedule);
  const NoiseSchedule sched = respace(full, strided_timesteps(full.n_steps(), n_reverse_steps));
  const int D = checkpoint.params.config.input_dim();
  const auto B = static_cast<Eigen::Index>(conds.size());
  Eigen::MatrixXd x(D, B);
  for (Eigen::Index b = 0; b < B; ++b) x.col(b) = standard_normal(D, rng);
  std::vector<int> ts(conds.size());
  for (int k = sched.n_steps(); k >= 1; --k) {
    std::fill(ts.begin(), ts.end(), sched.model_timestep(k));
    const Eigen::MatrixXd eps_hat = denoiser_forward(checkpoint.params, x, ts, conds);
    for (Eigen::Index b = 0; b < B; ++b) {
      const Tensor e = options.clip_x0 ? clip_predicted_noise(x.col(b), eps_hat.col(b), k, sched) : Tensor(eps_hat.col(b));
      x.col(b) = reverse_step(x.col(b), e, k, sched, rng);
    }
  }
  Eigen::MatrixXd img = (x.array() + 1.0) * 0.5;
  if (options.clip_output) img = img.cwiseMax(0.0).cwiseMin(1.0);
  return img;
}

Eigen::VectorXd generate(const Checkpoint& checkpoint, int cond, int n_reverse_steps, Rng& rng,
                         const GenerateOptions& options) {
  const int c[1] = {cond};
  return generate(checkpoint, c, n_reverse_steps, rng, options).col(0);
}

}  // namespace b3d
