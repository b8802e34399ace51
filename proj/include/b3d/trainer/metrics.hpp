#pragma once

#include <span>
#include <vector>

#include "b3d/core/image.hpp"
#include "b3d/core/record.hpp"

namespace b3d {

// Mean over views of the variance of the 4-neighbour Laplacian of luminance,
// taken over interior pixels.
double laplacian_variance(const ImageF& view);
double sharpness_metric(std::span<const ImageF> views);
double sharpness_metric(const Views& views);

inline constexpr int kHistogramLevels = 4;  // per channel
inline constexpr double kNearWhite = 0.92;  // all channels >= this -> background

// Normalised joint RGB histogram over foreground pixels; empty when the view
// has no foreground.
std::vector<double> foreground_histogram(const ImageF& view);

struct ConsistencyResult {
  double value = 0.0;  // mean pairwise total-variation distance, [0,1]
  std::vector<int> empty_views;  // views without foreground (distance 1 to every other view)
  bool flagged() const noexcept { return !empty_views.empty(); }
};

// Requires exactly 4 views; lower is more consistent.
ConsistencyResult consistency_metric(std::span<const ImageF> views);
ConsistencyResult consistency_metric(const Views& views);

std::vector<ImageF> to_float(const Views& views);

}  // namespace b3d
