#include "b3d/trainer/sweep.hpp"

#include <algorithm>
#include <limits>
#include <numbers>
#include <map>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "b3d/core/error.hpp"
#include "b3d/trainer/degrade.hpp"
#include "b3d/trainer/metrics.hpp"
#include "b3d/trainer/scene.hpp"

namespace b3d {

namespace {

constexpr int kMaskCells = 8;
constexpr double kMaskSpan = 2.0;  // half-width of the sampling window, in ink std
constexpr double kMaskWeight = 2.0;

}  // namespace

Eigen::VectorXd condition_features(const Eigen::VectorXd& grid, int view_size) {
  const int v = view_size, g = 2 * v, M = kMaskCells;
  if (grid.size() != 3 * g * g) throw ShapeError(fmt::format("feature input has {} elements, expected {}", grid.size(), 3 * g * g));
  Eigen::VectorXd f = Eigen::VectorXd::Zero(4 * M * M + 4 + 2);
  double hue_c = 0, hue_s = 0;
  std::vector<double> ink(static_cast<std::size_t>(v * v));
  for (int q = 0; q < 4; ++q) {
    const int ox = (q % 2) * v, oy = (q / 2) * v;
    double w = 0, sx = 0, sy = 0, sxx = 0, syy = 0;
    for (int y = 0; y < v; ++y)
      for (int x = 0; x < v; ++x) {
        const Eigen::Index i = 3 * ((oy + y) * g + ox + x);
        const double r = std::clamp(grid[i], 0.0, 1.0), gr = std::clamp(grid[i + 1], 0.0, 1.0),
                     b = std::clamp(grid[i + 2], 0.0, 1.0);
        const double lo = std::min({r, gr, b}), hi = std::max({r, gr, b});
        const double k = 1.0 - lo;
        ink[static_cast<std::size_t>(y * v + x)] = k;
        w += k;
        sx += k * x;
        sy += k * y;
        sxx += k * x * x;
        syy += k * y * y;
        if (hi - lo > 1e-9) {
          const double h = rgb_to_hsv(r, gr, b)[0] * 2.0 * std::numbers::pi;
          hue_c += (hi - lo) * std::cos(h);
          hue_s += (hi - lo) * std::sin(h);
        }
      }
    const double peak = *std::max_element(ink.begin(), ink.end());
    if (peak > 0.05)
      for (auto& k : ink) k /= peak;
    double mx = 0.5 * v - 0.5, my = mx, dx = 0.25 * v, dy = dx;
    if (w > 1e-6) {
      mx = sx / w;
      my = sy / w;
      dx = std::sqrt(std::max(sxx / w - mx * mx, 0.25));
      dy = std::sqrt(std::max(syy / w - my * my, 0.25));
    }
    f[4 * M * M + q] = std::log(dx / dy);
    auto ink_at = [&](int x, int y) { return ink[static_cast<std::size_t>(y * v + x)]; };
    for (int j = 0; j < M; ++j)
      for (int i = 0; i < M; ++i) {
        const double px = mx + kMaskSpan * dx * ((i + 0.5) * 2.0 / M - 1.0);
        const double py = my + kMaskSpan * dy * ((j + 0.5) * 2.0 / M - 1.0);
        if (px < 0 || py < 0 || px > v - 1 || py > v - 1) continue;
        const int x0 = static_cast<int>(px), y0 = static_cast<int>(py);
        const int x1 = std::min(x0 + 1, v - 1), y1 = std::min(y0 + 1, v - 1);
        const double fx = px - x0, fy = py - y0;
        const double val = (1 - fx) * (1 - fy) * ink_at(x0, y0) + fx * (1 - fy) * ink_at(x1, y0) +
                           (1 - fx) * fy * ink_at(x0, y1) + fx * fy * ink_at(x1, y1);
        f[q * M * M + j * M + i] = kMaskWeight * val / M;
      }
  }
  const double norm = std::hypot(hue_c, hue_s);
  if (norm > 0) {
    f[4 * M * M + 4] = hue_c / norm;
    f[4 * M * M + 5] = hue_s / norm;
  }
  return f;
}

Eigen::MatrixXd condition_features(const Eigen::MatrixXd& grids, int view_size) {
  Eigen::MatrixXd out(4 * kMaskCells * kMaskCells + 6, grids.cols());
  for (Eigen::Index b = 0; b < grids.cols(); ++b) out.col(b) = condition_features(Eigen::VectorXd(grids.col(b)), view_size);
  return out;
}

ConditionClassifier::ConditionClassifier(const Eigen::MatrixXd& features, std::span<const int> conds,
                                         std::span<const int> groups) {
  if (static_cast<std::size_t>(features.cols()) != conds.size() || (!groups.empty() && groups.size() != conds.size()))
    throw ShapeError("classifier: features, conditions and groups disagree in count");
  std::map<std::pair<int, int>, std::pair<Eigen::VectorXd, int>> acc;
  for (std::size_t b = 0; b < conds.size(); ++b) {
    const std::pair<int, int> key{conds[b], groups.empty() ? 0 : groups[b]};
    auto [it, fresh] = acc.try_emplace(key, Eigen::VectorXd::Zero(features.rows()), 0);
    it->second.first += features.col(static_cast<Eigen::Index>(b));
    ++it->second.second;
  }
  centroids_.resize(features.rows(), static_cast<Eigen::Index>(acc.size()));
  Eigen::Index k = 0;
  for (const auto& [key, sum] : acc) {
    centroids_.col(k++) = sum.first / sum.second;
    labels_.push_back(key.first);
  }
}

int ConditionClassifier::predict(const Eigen::VectorXd& features) const {
  if (labels_.empty()) return -1;
  Eigen::Index best = 0;
  (centroids_.colwise() - features).colwise().squaredNorm().minCoeff(&best);
  return labels_[static_cast<std::size_t>(best)];
}

double ConditionClassifier::accuracy(const Eigen::MatrixXd& features, std::span<const int> conds) const {
  if (features.cols() == 0) return 0.0;
  int hits = 0;
  for (Eigen::Index b = 0; b < features.cols(); ++b)
    hits += predict(features.col(b)) == conds[static_cast<std::size_t>(b)];
  return 100.0 * hits / static_cast<double>(features.cols());
}

ConditionClassifier reference_classifier(int view_size, std::uint64_t seed, int per_condition) {
  if (per_condition < 1) throw ParameterError("reference_classifier: per_condition must be >= 1");
  Rng rng = make_rng(derive_seed(seed, hash_string("reference-classifier")));
  const auto refs = render_toy_dataset(per_condition * kConditionCount, view_size, rng);
  const double sigmas[] = {0.0, 1.0, 2.0};
  const auto n = static_cast<Eigen::Index>(refs.size());
  Eigen::MatrixXd feats(4 * kMaskCells * kMaskCells + 6, 3 * n);
  std::vector<int> conds, groups;
  for (int gi = 0; gi < 3; ++gi)
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& r = refs[static_cast<std::size_t>(i)];
      const MultiViewRecord rec = sigmas[gi] > 0 ? degrade_views(r, sigmas[gi], kViewsPerRecord, rng) : r;
      const TrainExample ex = make_example(rec);
      feats.col(gi * n + i) = condition_features(Eigen::VectorXd((ex.x0.array() + 1.0) * 0.5), view_size);
      conds.push_back(ex.condition);
      groups.push_back(gi);
    }
  return ConditionClassifier(feats, conds, groups);
}

SampleStats evaluate_samples(const Eigen::MatrixXd& samples, std::span<const int> conds, int view_size,
                             const ConditionClassifier& classifier) {
  SampleStats s;
  const auto n = samples.cols();
  for (Eigen::Index b = 0; b < n; ++b) {
    const Views views = split_grid(tensor_to_grid(samples.col(b), view_size));
    s.sharpness += sharpness_metric(views);
    s.consistency += consistency_metric(views).value;
  }
  s.sharpness /= static_cast<double>(n);
  s.consistency /= static_cast<double>(n);
  s.cond_accuracy = classifier.accuracy(condition_features(samples, view_size), conds);
  return s;
}

TrainingSet make_ablation_data(const SweepConfig& config, std::uint64_t seed) {
  const int v = config.base.model.view_size;
  Rng clean_rng = make_rng(derive_seed(seed, hash_string("clean-scenes")));
  Rng synth_rng = make_rng(derive_seed(seed, hash_string("synthetic-scenes")));
  Rng blur_rng = make_rng(derive_seed(seed, hash_string("blur")));
  const auto clean = render_toy_dataset(config.n_clean_scenes, v, clean_rng);
  auto synthetic = render_toy_dataset(config.n_synthetic_scenes, v, synth_rng);
  for (auto& r : synthetic) r = degrade_views(r, config.blur_sigma, config.n_blurred, blur_rng);
  TrainingSet data = partition_by_source(clean);
  for (auto& [source, examples] : partition_by_source(synthetic)) data[source] = std::move(examples);
  return data;
}

TrainConfig ablation_train_config(const SweepConfig& config, int T, std::uint64_t seed, bool* synthetic_excluded) {
  TrainConfig tc = config.base;
  const int n = tc.schedule.n_steps;
  if (T < 0 || T > n) throw RangeError(fmt::format("sweep T={} outside [0, {}]", T, n));
  tc.seed = seed;
  tc.policy = default_policy(T, n);
  const bool excluded = T >= n;
  if (excluded) {
    spdlog::info("sweep T={}: synthetic range [{}, {}] is empty, synthetic source excluded", T, T, n);
    tc.policy.erase(DataSource::synthetic_nvs_a);
    tc.policy.erase(DataSource::synthetic_nvs_b);
    tc.source_mix = {{DataSource::rendered_asset, 1.0}};
  } else {
    tc.source_mix = {{DataSource::rendered_asset, config.clean_fraction},
                     {DataSource::synthetic_nvs_a, 1.0 - config.clean_fraction}};
  }
  if (synthetic_excluded) *synthetic_excluded = excluded;
  return tc;
}

SweepReport ablation_sweep(const SweepConfig& config, const SweepProgress& progress) {
  SweepReport report;
  const int v = config.base.model.view_size;
  std::vector<int> conds;
  for (int c = 0; c < config.base.model.n_conditions; ++c)
    for (int k = 0; k < config.samples_per_condition; ++k) conds.push_back(c);

  for (std::uint64_t seed : config.seeds) {
    const TrainingSet data = make_ablation_data(config, seed);
    const ConditionClassifier classifier = reference_classifier(v, seed, config.reference_per_condition);

    for (int T : config.t_values) {
      SweepRow row;
      row.T = T;
      row.seed = seed;
      const TrainConfig tc = ablation_train_config(config, T, seed, &row.synthetic_excluded);
      const TrainResult tr = train(tc, data);
      const std::size_t tail = std::min<std::size_t>(100, tr.loss.size());
      for (std::size_t i = tr.loss.size() - tail; i < tr.loss.size(); ++i) row.final_loss += tr.loss[i].loss;
      row.final_loss = tail ? row.final_loss / static_cast<double>(tail) : 0.0;

      Rng gen_rng = make_rng(derive_seed(seed, {hash_string("generate"), static_cast<std::uint64_t>(T)}));
      const Eigen::MatrixXd samples = generate(tr.checkpoint, conds, config.n_reverse_steps, gen_rng);
      const SampleStats st = evaluate_samples(samples, conds, v, classifier);
      row.sharpness = st.sharpness;
      row.consistency = st.consistency;
      row.cond_accuracy = st.cond_accuracy;
      report.rows.push_back(row);
      if (progress) progress(row);
    }
  }
  return report;
}

std::vector<SweepSummary> SweepReport::seed_means() const {
  std::map<int, std::pair<SweepSummary, int>> acc;
  std::vector<int> order;
  for (const auto& r : rows) {
    auto [it, inserted] = acc.try_emplace(r.T);
    if (inserted) order.push_back(r.T);
    auto& [s, n] = it->second;
    s.T = r.T;
    s.sharpness += r.sharpness;
    s.consistency += r.consistency;
    s.cond_accuracy += r.cond_accuracy;
    s.final_loss += r.final_loss;
    ++n;
  }
  std::vector<SweepSummary> out;
  for (int T : order) {
    auto [s, n] = acc.at(T);
    s.sharpness /= n;
    s.consistency /= n;
    s.cond_accuracy /= n;
    s.final_loss /= n;
    out.push_back(s);
  }
  return out;
}

std::string sweep_table_csv(const SweepReport& report) {
  std::string out = "T,seed,sharpness,consistency,cond_accuracy,final_loss\n";
  for (const auto& r : report.rows)
    out += fmt::format("{},{},{:.9g},{:.9g},{:.9g},{:.9g}\n", r.T, r.seed, r.sharpness, r.consistency, r.cond_accuracy,
                       r.final_loss);
  return out;
}

std::string sweep_summary_csv(const SweepReport& report) {
  std::string out = "T,sharpness_mean,consistency_mean,cond_accuracy_mean,final_loss_mean\n";
  for (const auto& s : report.seed_means())
    out += fmt::format("{},{:.9g},{:.9g},{:.9g},{:.9g}\n", s.T, s.sharpness, s.consistency, s.cond_accuracy, s.final_loss);
  return out;
}

}  // namespace b3d
