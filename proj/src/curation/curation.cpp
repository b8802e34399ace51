#include "b3d/curation/curation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>
#include <tbb/parallel_for.h>
#include <tbb/task_arena.h>

#include "b3d/core/error.hpp"
#include "b3d/core/rng.hpp"
#include "b3d/trainer/degrade.hpp"
#include "b3d/trainer/metrics.hpp"
#include "b3d/trainer/scene.hpp"

namespace b3d {

// ---- labels -----------------------------------------------------------------

namespace {

std::vector<std::string> label_words(std::string_view text) {
  std::vector<std::string> words;
  std::string w;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isalpha(u)) {
      w.push_back(static_cast<char>(std::tolower(u)));
    } else if (!w.empty()) {
      words.push_back(std::move(w));
      w.clear();
    }
  }
  if (!w.empty()) words.push_back(std::move(w));
  return words;
}

// Score of the label phrase starting at word i, with its length in words.
std::optional<std::pair<int, int>> label_at(const std::vector<std::string>& w, std::size_t i) {
  if (w[i] == "relatively" && i + 1 < w.size()) {
    if (w[i + 1] == "poor") return std::pair{1, 2};
    if (w[i + 1] == "good") return std::pair{3, 2};
  }
  if (w[i] == "poor") return std::pair{0, 1};
  if (w[i] == "borderline" || w[i] == "boardline") return std::pair{2, 1};
  if (w[i] == "good") return std::pair{4, 1};
  if (w[i] == "perfect") return std::pair{5, 1};
  return std::nullopt;
}

}  // namespace

int parse_quality_label(std::string_view text) {
  const auto w = label_words(text);
  if (w.empty()) throw ScoringError("empty quality label");
  // the whole reply is a label, or starts with one
  if (auto first = label_at(w, 0)) return first->first;
  std::set<int> found;
  for (std::size_t i = 0; i < w.size();) {
    if (auto hit = label_at(w, i)) {
      found.insert(hit->first);
      i += static_cast<std::size_t>(hit->second);
    } else {
      ++i;
    }
  }
  if (found.size() == 1) return *found.begin();
  std::string shown(text.substr(0, 80));
  if (found.empty()) throw ScoringError(fmt::format("no quality label in '{}'", shown));
  throw ScoringError(fmt::format("ambiguous quality label in '{}'", shown));
}

// ---- heuristic scorer ---------------------------------------------------------

void ScorerConfig::validate() const {
  if (!(reference_variance > 0) || !std::isfinite(reference_variance))
    throw ConfigError("scorer reference_variance must be positive");
  if (blur_weight < 0 || consistency_weight < 0) throw ConfigError("scorer weights must be non-negative");
  if (std::abs(blur_weight + consistency_weight - 1.0) > 1e-9)
    throw ConfigError(fmt::format("scorer weights must sum to 1 (got {} + {})", blur_weight, consistency_weight));
  if (!(consistency_gain > 0)) throw ConfigError("scorer consistency_gain must be positive");
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (thresholds[i] < 0 || thresholds[i] > 1) throw ConfigError("scorer thresholds must lie in [0, 1]");
    if (i > 0 && !(thresholds[i] > thresholds[i - 1])) throw ConfigError("scorer thresholds must increase");
  }
}

double blur_score(const Image& view, double reference_variance) {
  if (view.width < 3 || view.height < 3) return 0.0;
  return std::min(1.0, laplacian_variance(to_float(view)) / reference_variance);
}

ConsistencyScore view_consistency_score(const Views& views, double gain) {
  const ConsistencyResult m = consistency_metric(views);
  if (m.flagged()) {
    spdlog::warn("view consistency: {} view(s) without foreground", m.empty_views.size());
    return {0.0, true};
  }
  return {1.0 - std::min(1.0, gain * m.value), false};
}

int bin_composite(double composite, const ScorerConfig& config) {
  int score = 0;
  for (double t : config.thresholds)
    if (composite >= t) ++score;
  return score;
}

CompositeScore composite_score(const Views& views, const ScorerConfig& config) {
  config.validate();
  CompositeScore s;
  for (const auto& v : views) s.blur += blur_score(v, config.reference_variance);
  s.blur /= static_cast<double>(views.size());
  s.consistency = view_consistency_score(views, config.consistency_gain);
  s.composite = config.blur_weight * s.blur + config.consistency_weight * s.consistency.value;
  const int score = bin_composite(s.composite, config);
  s.label = label_from_score(score, fmt::format("sharpness {:.3f}, view consistency {:.3f}{}, blend {:.3f}", s.blur,
                                                s.consistency.value, s.consistency.flagged ? " (empty view)" : "",
                                                s.composite));
  return s;
}

QualityLabel composite_quality(const MultiViewRecord& record, const ScorerConfig& config) {
  return composite_score(record.views, config).label;
}

void score_records(std::span<MultiViewRecord> records, const ScorerConfig& config, int workers) {
  config.validate();
  tbb::task_arena arena(std::max(1, workers));
  arena.execute([&] {
    tbb::parallel_for(std::size_t{0}, records.size(),
                      [&](std::size_t i) { records[i].quality = composite_quality(records[i], config); });
  });
}

// ---- filtering --------------------------------------------------------------

FilterRule default_filter_rule() {
  FilterRule r;
  r.min_score = {{DataSource::rendered_asset, 4},
                 {DataSource::synthetic_nvs_a, 4},
                 {DataSource::synthetic_nvs_b, 5},
                 {DataSource::single_view_2d, 4}};
  return r;
}

void FilterRule::validate() const {
  for (DataSource s : kAllSources) {
    auto it = min_score.find(s);
    if (it == min_score.end()) throw ConfigError(fmt::format("filter rule has no threshold for {}", to_string(s)));
    if (it->second < 0 || it->second > 5)
      throw ConfigError(fmt::format("filter threshold for {} must lie in [0, 5] (got {})", to_string(s), it->second));
  }
}

bool FilterRule::keeps(const MultiViewRecord& record) const {
  if (!record.quality) throw PreconditionError(fmt::format("record {} is unscored", record.record_id));
  return record.quality->score >= min_score.at(record.source);
}

namespace {

void require_scored(std::span<const MultiViewRecord> records) {
  std::vector<std::string> missing;
  for (const auto& r : records)
    if (!r.quality) missing.push_back(r.record_id);
  if (missing.empty()) return;
  const std::size_t shown = std::min<std::size_t>(missing.size(), 10);
  std::string list;
  for (std::size_t i = 0; i < shown; ++i) list += (i ? ", " : "") + missing[i];
  if (shown < missing.size()) list += fmt::format(", ... ({} more)", missing.size() - shown);
  throw PreconditionError(fmt::format("{} unscored records: {}", missing.size(), list));
}

}  // namespace

FilterResult filter_records(std::span<const MultiViewRecord> records, const FilterRule& rule) {
  rule.validate();
  require_scored(records);
  FilterResult out;
  for (const auto& r : records) (rule.keeps(r) ? out.kept : out.rejected).push_back(r);
  return out;
}

// ---- captions -------------------------------------------------------------

int caption_budget(CaptionMode mode) { return mode == CaptionMode::short_form ? kShortCaptionTokens : kLongCaptionTokens; }

namespace {

struct Token {
  std::size_t begin, end;
};

std::vector<Token> tokens_of(std::string_view text) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i == text.size()) break;
    const std::size_t b = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    out.push_back({b, i});
  }
  return out;
}

bool ends_sentence(std::string_view tok) {
  while (!tok.empty() && (tok.back() == '"' || tok.back() == '\'' || tok.back() == ')')) tok.remove_suffix(1);
  return !tok.empty() && (tok.back() == '.' || tok.back() == '!' || tok.back() == '?');
}

}  // namespace

int whitespace_tokens(std::string_view text) { return static_cast<int>(tokens_of(text).size()); }

Truncation fit_caption(std::string_view text, int budget) {
  if (budget < 1) throw ParameterError("caption budget must be >= 1");
  const auto toks = tokens_of(text);
  if (toks.empty()) return {};
  auto join = [&](std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) {
      if (i) s.push_back(' ');
      s.append(text.substr(toks[i].begin, toks[i].end - toks[i].begin));
    }
    return s;
  };
  if (toks.size() <= static_cast<std::size_t>(budget)) return {std::string(text.substr(toks.front().begin, toks.back().end - toks.front().begin)), false};
  std::size_t keep = 0;
  for (std::size_t i = 0; i < static_cast<std::size_t>(budget); ++i)
    if (ends_sentence(text.substr(toks[i].begin, toks[i].end - toks[i].begin))) keep = i + 1;
  if (keep == 0) keep = static_cast<std::size_t>(budget);
  return {join(keep), true};
}

// ---- statistics ---------------------------------------------------------------

ScoreHistogram score_histogram(std::span<const MultiViewRecord> records) {
  require_scored(records);
  ScoreHistogram h;
  for (DataSource s : kAllSources) h[s] = {};
  for (const auto& r : records) {
    const int s = r.quality->score;
    if (s < 0 || s > 5) throw ScoringError(fmt::format("record {} has score {} outside [0, 5]", r.record_id, s));
    ++h[r.source][static_cast<std::size_t>(s)];
  }
  return h;
}

std::string score_histogram_csv(const ScoreHistogram& h) {
  std::string out = "source,score_0,score_1,score_2,score_3,score_4,score_5,total\n";
  for (const auto& [source, bins] : h) {
    int total = 0;
    out += std::string(to_string(source));
    for (int c : bins) {
      out += fmt::format(",{}", c);
      total += c;
    }
    out += fmt::format(",{}\n", total);
  }
  return out;
}

LengthHistogram caption_length_histogram(std::span<const MultiViewRecord> records, int bin_width) {
  if (bin_width < 1) throw ParameterError("caption histogram bin width must be >= 1");
  LengthHistogram h;
  h.bin_width = bin_width;
  for (const auto& r : records) {
    if (!r.caption_short.empty()) {
      ++h.short_bins[whitespace_tokens(r.caption_short) / bin_width * bin_width];
      ++h.short_total;
    }
    if (!r.caption_long.empty()) {
      ++h.long_bins[whitespace_tokens(r.caption_long) / bin_width * bin_width];
      ++h.long_total;
    }
  }
  return h;
}

std::string caption_length_csv(const LengthHistogram& h) {
  std::string out = "field,bin_start,bin_end,count\n";
  for (const auto& [start, n] : h.short_bins) out += fmt::format("short,{},{},{}\n", start, start + h.bin_width - 1, n);
  for (const auto& [start, n] : h.long_bins) out += fmt::format("long,{},{},{}\n", start, start + h.bin_width - 1, n);
  return out;
}

double ConfusionMatrix::false_positive_rate() const {
  if (fp + tn == 0) throw PreconditionError("false positive rate undefined: no ground-truth LQ items");
  return static_cast<double>(fp) / static_cast<double>(fp + tn);
}

double ConfusionMatrix::false_negative_rate() const {
  if (fn + tp == 0) throw PreconditionError("false negative rate undefined: no ground-truth HQ items");
  return static_cast<double>(fn) / static_cast<double>(fn + tp);
}

ConfusionMatrix& operator+=(ConfusionMatrix& a, const ConfusionMatrix& b) {
  a.tp += b.tp;
  a.fp += b.fp;
  a.fn += b.fn;
  a.tn += b.tn;
  return a;
}

ConfusionMatrix confusion_matrix(std::span<const int> predicted_scores, const std::vector<bool>& ground_truth_hq,
                                 int hq_threshold) {
  if (predicted_scores.size() != ground_truth_hq.size())
    throw ShapeError(fmt::format("confusion matrix: {} predictions for {} labels", predicted_scores.size(),
                                 ground_truth_hq.size()));
  if (hq_threshold < 0 || hq_threshold > 5) throw ParameterError("hq_threshold must lie in [0, 5]");
  ConfusionMatrix m;
  for (std::size_t i = 0; i < predicted_scores.size(); ++i) {
    const bool pred = predicted_scores[i] >= hq_threshold;
    const bool gt = ground_truth_hq[i];
    if (pred && gt) ++m.tp;
    else if (pred) ++m.fp;
    else if (gt) ++m.fn;
    else ++m.tn;
  }
  return m;
}

std::string confusion_csv(const ConfusionMatrix& m) {
  std::string out = "predicted,gt_hq,gt_lq\n";
  out += fmt::format("hq,{},{}\nlq,{},{}\n", m.tp, m.fp, m.fn, m.tn);
  return out;
}

// ---- calibration --------------------------------------------------------------

LabeledFixture calibration_fixture(int n_records, int view_size, std::uint64_t seed) {
  if (n_records < 1) throw ParameterError("calibration fixture needs at least one record");
  LabeledFixture fx;
  Rng rng = make_rng(derive_seed(seed, hash_string("calibration")));
  for (int i = 0; i < n_records; ++i) {
    const int cond = static_cast<int>(uniform_int(rng, 0, kConditionCount - 1));
    MultiViewRecord r;
    r.source = DataSource::rendered_asset;
    const ToyScene scene = sample_scene(cond, rng);
    r.views = render_views(scene, view_size);
    r.prompt = scene_prompt(scene);
    bool hq = true;
    switch (i % 4) {
      case 1:
        r = degrade_views(r, 1.5, 1 + (i / 4) % kViewsPerRecord, rng);
        hq = false;
        break;
      case 3: {
        // same shape, opposite hue for the back half of the turn
        const int other = (cond / kHueBins) * kHueBins + (cond % kHueBins + kHueBins / 2) % kHueBins;
        const Views alt = render_views(sample_scene(other, rng), view_size);
        r.views[2] = alt[2];
        r.views[3] = alt[3];
        r.source = DataSource::synthetic_nvs_b;
        hq = false;
        break;
      }
      default:
        break;
    }
    seal(r);
    fx.records.push_back(std::move(r));
    fx.hq.push_back(hq);
  }
  return fx;
}

CalibrationReport calibrate(std::span<const MultiViewRecord> records, const std::vector<bool>& hq, int hq_threshold) {
  require_scored(records);
  if (records.size() != hq.size())
    throw ShapeError(fmt::format("calibration: {} records for {} labels", records.size(), hq.size()));
  CalibrationReport rep;
  rep.hq_threshold = hq_threshold;
  std::vector<int> scores;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const int s = records[i].quality->score;
    scores.push_back(s);
    ++(hq[i] ? rep.hq_scores : rep.lq_scores)[static_cast<std::size_t>(s)];
  }
  rep.matrix = confusion_matrix(scores, hq, hq_threshold);
  return rep;
}

std::string calibration_text(const CalibrationReport& rep) {
  const auto& m = rep.matrix;
  const auto pct = [&](long long c) { return m.total() ? 100.0 * static_cast<double>(c) / static_cast<double>(m.total()) : 0.0; };
  std::string out = fmt::format("items {}  hq threshold {}\n", m.total(), rep.hq_threshold);
  out += fmt::format("{:>10} {:>14} {:>14}\n", "", "gt HQ", "gt LQ");
  out += fmt::format("{:>10} {:>7} {:5.1f}% {:>7} {:5.1f}%\n", "pred HQ", m.tp, pct(m.tp), m.fp, pct(m.fp));
  out += fmt::format("{:>10} {:>7} {:5.1f}% {:>7} {:5.1f}%\n", "pred LQ", m.fn, pct(m.fn), m.tn, pct(m.tn));
  if (m.fp + m.tn) out += fmt::format("false positive rate {:.1f}%\n", 100.0 * m.false_positive_rate());
  if (m.fn + m.tp) out += fmt::format("false negative rate {:.1f}%\n", 100.0 * m.false_negative_rate());
  out += "score    gt_hq  gt_lq\n";
  for (std::size_t s = 0; s < 6; ++s) out += fmt::format("{:<8} {:>5} {:>6}\n", s, rep.hq_scores[s], rep.lq_scores[s]);
  return out;
}

}  // namespace b3d
