#include "b3d/core/record.hpp"

#include <chrono>
#include <ctime>

#include <fmt/format.h>

#include "b3d/core/codec.hpp"
#include "b3d/core/error.hpp"

namespace b3d {

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::pending: return "pending";
    case Stage::t2i_done: return "t2i_done";
    case Stage::nvs_done: return "nvs_done";
    case Stage::assembled: return "assembled";
    case Stage::failed: return "failed";
  }
  return "?";
}

Stage parse_stage(std::string_view text) {
  for (auto s : {Stage::pending, Stage::t2i_done, Stage::nvs_done, Stage::assembled, Stage::failed})
    if (to_string(s) == text) return s;
  throw ConfigError(fmt::format("unknown pipeline stage '{}'", text));
}

std::string_view QualityLabel::name() const { return kQualityNames.at(static_cast<std::size_t>(score)); }

QualityLabel label_from_score(int score, std::string rationale) {
  if (score < 0 || score > 5) throw RangeError(fmt::format("quality score {} outside [0,5]", score));
  return QualityLabel{score, std::move(rationale)};
}

Image assemble_grid(const Views& views) {
  const int n = views[0].width;
  for (std::size_t i = 0; i < views.size(); ++i) {
    if (views[i].width != n || views[i].height != n)
      throw ShapeError(fmt::format("view {} is {}x{}, expected {}x{}", i, views[i].width, views[i].height, n, n));
  }
  Image grid(2 * n, 2 * n);
  for (int v = 0; v < kViewsPerRecord; ++v) {
    const int ox = (v % 2) * n, oy = (v / 2) * n;
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) grid.set(ox + x, oy + y, views[v].rgb(x, y));
  }
  return grid;
}

Views split_grid(const Image& grid) {
  if (grid.width != grid.height || grid.width % 2 != 0 || grid.width == 0)
    throw ShapeError(fmt::format("grid must be square with even side, got {}x{}", grid.width, grid.height));
  const int n = grid.width / 2;
  Views views;
  for (int v = 0; v < kViewsPerRecord; ++v) {
    const int ox = (v % 2) * n, oy = (v / 2) * n;
    views[v] = Image(n, n);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) views[v].set(x, y, grid.rgb(ox + x, oy + y));
  }
  return views;
}

std::string compute_record_id(const Views& views) {
  Bytes all;
  for (const auto& v : views) all.insert(all.end(), v.pixels.begin(), v.pixels.end());
  return sha256_hex(all);
}

void seal(MultiViewRecord& record) {
  record.grid = assemble_grid(record.views);
  record.record_id = compute_record_id(record.views);
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace b3d
