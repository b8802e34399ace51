#include "b3d/trainer/degrade.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "b3d/core/error.hpp"
#include "b3d/diffusion/policy.hpp"

namespace b3d {

ImageF gaussian_blur(const ImageF& img, double sigma) {
  if (sigma < 0) throw ParameterError(fmt::format("blur_sigma must be >= 0 (got {})", sigma));
  if (sigma == 0) return img;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  for (int k = -radius; k <= radius; ++k) kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
  const double sum = std::accumulate(kernel.begin(), kernel.end(), 0.0);
  for (auto& w : kernel) w /= sum;

  auto pass = [&](const ImageF& src, bool horizontal) {
    ImageF dst(src.width, src.height);
    for (int y = 0; y < src.height; ++y)
      for (int x = 0; x < src.width; ++x)
        for (int c = 0; c < 3; ++c) {
          double acc = 0;
          for (int k = -radius; k <= radius; ++k) {
            const int sx = horizontal ? std::clamp(x + k, 0, src.width - 1) : x;
            const int sy = horizontal ? y : std::clamp(y + k, 0, src.height - 1);
            acc += kernel[k + radius] * src.at(sx, sy, c);
          }
          dst.at(x, y, c) = acc;
        }
    return dst;
  };
  return pass(pass(img, true), false);
}

Image gaussian_blur(const Image& img, double sigma) {
  if (sigma == 0) return img;
  return to_u8(gaussian_blur(to_float(img), sigma));
}

MultiViewRecord degrade_views(const MultiViewRecord& record, double blur_sigma, int n_blurred, Rng& rng) {
  if (n_blurred < 0 || n_blurred > kViewsPerRecord)
    throw ParameterError(fmt::format("n_blurred must lie in [0, 4] (got {})", n_blurred));
  if (blur_sigma < 0) throw ParameterError(fmt::format("blur_sigma must be >= 0 (got {})", blur_sigma));
  MultiViewRecord out = record;
  out.source = DataSource::synthetic_nvs_a;
  if (n_blurred == 0) return out;

  std::vector<int> candidates;
  if (n_blurred == kViewsPerRecord) {
    candidates = {0, 1, 2, 3};
  } else {
    candidates = {1, 2, 3};
    // Partial Fisher-Yates; draws come from the caller's stream only.
    for (int i = 0; i < n_blurred; ++i) {
      const auto j = static_cast<std::size_t>(uniform_int(rng, i, static_cast<std::int64_t>(candidates.size()) - 1));
      std::swap(candidates[static_cast<std::size_t>(i)], candidates[j]);
    }
    candidates.resize(static_cast<std::size_t>(n_blurred));
  }
  for (int v : candidates) out.views[static_cast<std::size_t>(v)] = gaussian_blur(record.views[static_cast<std::size_t>(v)], blur_sigma);
  seal(out);
  out.meta["blurred_views"] = candidates;
  out.meta["blur_sigma"] = blur_sigma;
  return out;
}

}  // namespace b3d
