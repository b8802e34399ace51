#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "b3d/trainer/train.hpp"

namespace b3d {

// Settings the default sweep was tuned at: linear betas, 3000 steps.
inline TrainConfig sweep_base_config() {
  TrainConfig c;
  c.schedule.kind = ScheduleKind::linear;
  c.total_steps = 3000;
  c.learning_rate = 0.05;
  return c;
}

struct SweepConfig {
  TrainConfig base = sweep_base_config();
  std::vector<int> t_values = {0, 200, 600};
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  int n_clean_scenes = 96;
  int n_synthetic_scenes = 192;
  double blur_sigma = 1.5;
  int n_blurred = 3;
  double clean_fraction = 0.4;  // rest of each batch is blurred synthetic data
  int samples_per_condition = 8;
  int reference_per_condition = 20;
  int n_reverse_steps = 100;
};

struct SweepRow {
  int T = 0;
  std::uint64_t seed = 0;
  double sharpness = 0.0;
  double consistency = 0.0;
  double cond_accuracy = 0.0;  // percent
  double final_loss = 0.0;
  bool synthetic_excluded = false;
};

struct SweepSummary {
  int T = 0;
  double sharpness = 0.0, consistency = 0.0, cond_accuracy = 0.0, final_loss = 0.0;
};

struct SweepReport {
  std::vector<SweepRow> rows;
  std::vector<SweepSummary> seed_means() const;
};

// Size-normalised ink silhouettes (8x8 per view, sampled over +-2 std of
// the ink mass), per-view log aspect and the saturation-weighted mean hue.
// `grid` is an image-space tensor in [0,1].
Eigen::VectorXd condition_features(const Eigen::VectorXd& grid, int view_size);
Eigen::MatrixXd condition_features(const Eigen::MatrixXd& grids, int view_size);

// Nearest centroid in feature space. Each (condition, group) pair gets its
// own centroid, so a condition can carry several prototypes.
class ConditionClassifier {
 public:
  ConditionClassifier(const Eigen::MatrixXd& features, std::span<const int> conds, std::span<const int> groups = {});
  int predict(const Eigen::VectorXd& features) const;
  double accuracy(const Eigen::MatrixXd& features, std::span<const int> conds) const;  // percent

 private:
  Eigen::MatrixXd centroids_;
  std::vector<int> labels_;
};

// Fresh clean renders plus copies with all views blurred at sigma 1 and 2,
// one prototype group each, so blurry samples are still judged by content.
ConditionClassifier reference_classifier(int view_size, std::uint64_t seed, int per_condition = 20);

struct SampleStats {
  double sharpness = 0.0;
  double consistency = 0.0;
  double cond_accuracy = 0.0;
};

// samples: image space, input_dim x n.
SampleStats evaluate_samples(const Eigen::MatrixXd& samples, std::span<const int> conds, int view_size,
                             const ConditionClassifier& classifier);

// Clean + blurred toy training sets for one seed.
TrainingSet make_ablation_data(const SweepConfig& config, std::uint64_t seed);

// Synthetic-source timesteps restricted to [T, n_steps]; an empty range drops
// the synthetic source from the mixture.
TrainConfig ablation_train_config(const SweepConfig& config, int T, std::uint64_t seed, bool* synthetic_excluded = nullptr);

using SweepProgress = std::function<void(const SweepRow&)>;
SweepReport ablation_sweep(const SweepConfig& config, const SweepProgress& progress = {});

// Header: T,seed,sharpness,consistency,cond_accuracy,final_loss
std::string sweep_table_csv(const SweepReport& report);
std::string sweep_summary_csv(const SweepReport& report);

}  // namespace b3d
