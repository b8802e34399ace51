#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "b3d/core/record.hpp"

namespace b3d {

// ---- labels -----------------------------------------------------------------

// Case-insensitive; '-' and '_' read as spaces; "boardline" is accepted for
// "borderline". Exact match first, otherwise the one label phrase that occurs
// as whole words in the text. Anything else -> ScoringError.
int parse_quality_label(std::string_view text);

// ---- heuristic scorer ---------------------------------------------------------

struct ScorerConfig {
  double reference_variance = 0.04;  // Laplacian variance that maps to 1
  double blur_weight = 0.5;
  double consistency_weight = 0.5;
  double consistency_gain = 1.5;  // metric of 2/3 (two unrelated pairs) maps to 0
  std::array<double, 5> thresholds = {0.3, 0.45, 0.6, 0.75, 0.9};

  void validate() const;  // ConfigError; weights must sum to 1
};

// min(1, laplacian variance / reference); 0 for a flat image.
double blur_score(const Image& view, double reference_variance = ScorerConfig{}.reference_variance);

struct ConsistencyScore {
  double value = 0.0;  // [0,1], 1 = consistent
  bool flagged = false;  // some view had no foreground; value forced to 0
};
ConsistencyScore view_consistency_score(const Views& views, double gain = ScorerConfig{}.consistency_gain);

struct CompositeScore {
  double blur = 0.0;  // mean over views
  ConsistencyScore consistency;
  double composite = 0.0;
  QualityLabel label;
};

CompositeScore composite_score(const Views& views, const ScorerConfig& config = {});
QualityLabel composite_quality(const MultiViewRecord& record, const ScorerConfig& config = {});
// Bins a blended value with the fixed thresholds.
int bin_composite(double composite, const ScorerConfig& config = {});

// ---- filtering --------------------------------------------------------------

struct FilterRule {
  std::map<DataSource, int> min_score;

  bool keeps(const MultiViewRecord& record) const;
  void validate() const;  // ConfigError: scores in [0,5], every source covered
  friend bool operator==(const FilterRule&, const FilterRule&) = default;
};

// 4 everywhere, 5 for the second synthetic source.
FilterRule default_filter_rule();

struct FilterResult {
  std::vector<MultiViewRecord> kept;
  std::vector<MultiViewRecord> rejected;
};

// Unscored records -> PreconditionError listing their ids.
FilterResult filter_records(std::span<const MultiViewRecord> records, const FilterRule& rule);

// ---- captions -------------------------------------------------------------

enum class CaptionMode { short_form, long_form };
inline constexpr int kShortCaptionTokens = 77;
inline constexpr int kLongCaptionTokens = 120;

int caption_budget(CaptionMode mode);
int whitespace_tokens(std::string_view text);

struct Truncation {
  std::string text;
  bool truncated = false;
};
// Cuts to the last sentence end ('.', '!' or '?') within the budget; without
// one, to the first `budget` tokens.
Truncation fit_caption(std::string_view text, int budget);

// ---- statistics ---------------------------------------------------------------

using ScoreHistogram = std::map<DataSource, std::array<int, 6>>;

// Every source gets a row, empty ones included. Unscored -> PreconditionError.
ScoreHistogram score_histogram(std::span<const MultiViewRecord> records);
std::string score_histogram_csv(const ScoreHistogram& h);

struct LengthHistogram {
  int bin_width = 10;
  std::map<int, int> short_bins;  // bin start -> count
  std::map<int, int> long_bins;
  int short_total = 0;
  int long_total = 0;
};
// Token counts of non-empty captions per field.
LengthHistogram caption_length_histogram(std::span<const MultiViewRecord> records, int bin_width = 10);
std::string caption_length_csv(const LengthHistogram& h);

// Rows are model predictions, columns ground truth.
struct ConfusionMatrix {
  long long tp = 0, fp = 0, fn = 0, tn = 0;

  long long total() const noexcept { return tp + fp + fn + tn; }
  double false_positive_rate() const;  // fp / (fp + tn)
  double false_negative_rate() const;  // fn / (fn + tp)
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

// Prediction is HQ when score >= hq_threshold. Lists must align.
ConfusionMatrix confusion_matrix(std::span<const int> predicted_scores, const std::vector<bool>& ground_truth_hq,
                                 int hq_threshold = 4);
std::string confusion_csv(const ConfusionMatrix& m);
ConfusionMatrix& operator+=(ConfusionMatrix& a, const ConfusionMatrix& b);

// Scores every record with the heuristic scorer, `workers` at a time.
void score_records(std::span<MultiViewRecord> records, const ScorerConfig& config = {}, int workers = 1);

// ---- calibration --------------------------------------------------------------

struct LabeledFixture {
  std::vector<MultiViewRecord> records;
  std::vector<bool> hq;  // ground truth
};

// Clean renders are HQ. LQ records have 1 to 4 views blurred, or views 2 and
// 3 taken from a scene of the opposite hue. Lightly blurred items are meant
// to be hard: they land as false positives.
LabeledFixture calibration_fixture(int n_records, int view_size, std::uint64_t seed);

struct CalibrationReport {
  ConfusionMatrix matrix;
  std::array<int, 6> hq_scores{};  // score histogram of ground-truth HQ items
  std::array<int, 6> lq_scores{};
  int hq_threshold = 4;
};

// Records must already be scored.
CalibrationReport calibrate(std::span<const MultiViewRecord> records, const std::vector<bool>& hq, int hq_threshold = 4);
std::string calibration_text(const CalibrationReport& report);

}  // namespace b3d
