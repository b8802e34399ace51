#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "b3d/core/image.hpp"
#include "b3d/diffusion/policy.hpp"

namespace b3d {

inline constexpr int kViewsPerRecord = 4;
using Views = std::array<Image, kViewsPerRecord>;

// Pipeline stages in the only order a record may move through them.
enum class Stage { pending, t2i_done, nvs_done, assembled, failed };

std::string_view to_string(Stage stage);
Stage parse_stage(std::string_view text);

// Six-level ordinal quality scale.
struct QualityLabel {
  int score = 0;  // 0..5
  std::string rationale;

  std::string_view name() const;
  friend bool operator==(const QualityLabel&, const QualityLabel&) = default;
};

inline constexpr std::array<std::string_view, 6> kQualityNames = {
    "poor", "relatively poor", "borderline", "relatively good", "good", "perfect"};

QualityLabel label_from_score(int score, std::string rationale = {});

struct Provenance {
  std::string generator;
  std::uint64_t seed = 0;
  // Stage name -> ISO-8601 UTC wall-clock time. Volatile; excluded from
  // canonical comparisons.
  std::map<std::string, std::string> timestamps;

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct MultiViewRecord {
  std::string record_id;
  DataSource source = DataSource::rendered_asset;
  Views views;
  Image grid;
  std::string prompt;
  std::string caption_short;
  std::string caption_long;
  std::optional<QualityLabel> quality;
  Stage stage = Stage::pending;
  Provenance provenance;
  // Condition metadata (toy scene parameters) and pass-through remote tags.
  nlohmann::json meta = nlohmann::json::object();
  std::string error;  // last stage error for failed records

  friend bool operator==(const MultiViewRecord&, const MultiViewRecord&) = default;
};

// 2x2 row-major tiling: view0 top-left, view1 top-right, view2 bottom-left,
// view3 bottom-right. Views must be square and of identical size.
Image assemble_grid(const Views& views);
Views split_grid(const Image& grid);

// SHA-256 over the concatenated raw pixel bytes of the four views.
std::string compute_record_id(const Views& views);

// Rebuilds grid and record_id from the views.
void seal(MultiViewRecord& record);

std::string utc_timestamp();

}  // namespace b3d
