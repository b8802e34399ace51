#include "b3d/trainer/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "b3d/core/error.hpp"

namespace b3d {

double laplacian_variance(const ImageF& view) {
  if (view.width < 3 || view.height < 3) return 0.0;
  const std::vector<double> lum = luminance(view);
  const int w = view.width;
  auto at = [&](int x, int y) { return lum[static_cast<std::size_t>(y) * w + x]; };
  double sum = 0, sum_sq = 0;
  std::size_t n = 0;
  for (int y = 1; y + 1 < view.height; ++y)
    for (int x = 1; x + 1 < w; ++x) {
      // Neighbour differences rather than a raw sum so a constant offset
      // cancels exactly.
      const double c = at(x, y);
      const double lap = (at(x - 1, y) - c) + (at(x + 1, y) - c) + (at(x, y - 1) - c) + (at(x, y + 1) - c);
      sum += lap;
      sum_sq += lap * lap;
      ++n;
    }
  const double mean = sum / static_cast<double>(n);
  return std::max(0.0, sum_sq / static_cast<double>(n) - mean * mean);
}

double sharpness_metric(std::span<const ImageF> views) {
  if (views.empty()) throw ParameterError("sharpness_metric needs at least one view");
  double acc = 0;
  for (const auto& v : views) acc += laplacian_variance(v);
  return acc / static_cast<double>(views.size());
}

std::vector<ImageF> to_float(const Views& views) {
  std::vector<ImageF> out;
  for (const auto& v : views) out.push_back(to_float(v));
  return out;
}

double sharpness_metric(const Views& views) {
  const auto f = to_float(views);
  return sharpness_metric(std::span<const ImageF>(f));
}

std::vector<double> foreground_histogram(const ImageF& view) {
  constexpr int L = kHistogramLevels;
  std::vector<double> hist(static_cast<std::size_t>(L * L * L), 0.0);
  double count = 0;
  for (int y = 0; y < view.height; ++y)
    for (int x = 0; x < view.width; ++x) {
      const double r = view.at(x, y, 0), g = view.at(x, y, 1), b = view.at(x, y, 2);
      if (r >= kNearWhite && g >= kNearWhite && b >= kNearWhite) continue;
      auto q = [](double v) { return std::clamp(static_cast<int>(v * L), 0, L - 1); };
      hist[static_cast<std::size_t>((q(r) * L + q(g)) * L + q(b))] += 1.0;
      count += 1.0;
    }
  if (count == 0) return {};
  for (auto& h : hist) h /= count;
  return hist;
}

ConsistencyResult consistency_metric(std::span<const ImageF> views) {
  if (views.size() != kViewsPerRecord)
    throw ShapeError(fmt::format("consistency_metric needs exactly 4 views (got {})", views.size()));
  std::vector<std::vector<double>> hists;
  ConsistencyResult res;
  for (std::size_t i = 0; i < views.size(); ++i) {
    hists.push_back(foreground_histogram(views[i]));
    if (hists.back().empty()) res.empty_views.push_back(static_cast<int>(i));
  }
  double total = 0;
  int pairs = 0;
  for (std::size_t i = 0; i < hists.size(); ++i)
    for (std::size_t j = i + 1; j < hists.size(); ++j, ++pairs) {
      if (hists[i].empty() || hists[j].empty()) {
        total += 1.0;
        continue;
      }
      double tv = 0;
      for (std::size_t k = 0; k < hists[i].size(); ++k) tv += std::abs(hists[i][k] - hists[j][k]);
      total += 0.5 * tv;
    }
  res.value = total / pairs;
  return res;
}

ConsistencyResult consistency_metric(const Views& views) {
  const auto f = to_float(views);
  return consistency_metric(std::span<const ImageF>(f));
}

}  // namespace b3d
