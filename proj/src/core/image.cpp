#include "b3d/core/image.hpp"

#include <algorithm>
#include <cmath>

namespace b3d {

Image::Image(int w, int h, Rgb8 fill) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3) {
  for (std::size_t i = 0; i < pixels.size(); i += 3) {
    pixels[i] = fill[0];
    pixels[i + 1] = fill[1];
    pixels[i + 2] = fill[2];
  }
}

ImageF to_float(const Image& img) {
  ImageF out(img.width, img.height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) out.data[i] = img.pixels[i] / 255.0;
  return out;
}

Image to_u8(const ImageF& img) {
  Image out(img.width, img.height);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const double v = std::clamp(img.data[i], 0.0, 1.0);
    out.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return out;
}

std::vector<double> luminance(const ImageF& img) {
  std::vector<double> out(static_cast<std::size_t>(img.width) * img.height);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = 0.299 * img.data[3 * i] + 0.587 * img.data[3 * i + 1] + 0.114 * img.data[3 * i + 2];
  }
  return out;
}

Image resize_area(const Image& img, int width, int height) {
  if (img.width == width && img.height == height) return img;
  Image out(width, height);
  const double sx = static_cast<double>(img.width) / width;
  const double sy = static_cast<double>(img.height) / height;
  for (int y = 0; y < height; ++y) {
    const double y0 = y * sy, y1 = (y + 1) * sy;
    for (int x = 0; x < width; ++x) {
      const double x0 = x * sx, x1 = (x + 1) * sx;
      double acc[3] = {0, 0, 0};
      double wsum = 0;
      for (int iy = static_cast<int>(std::floor(y0)); iy < std::min(img.height, static_cast<int>(std::ceil(y1))); ++iy) {
        const double wy = std::min<double>(iy + 1, y1) - std::max<double>(iy, y0);
        if (wy <= 0) continue;
        for (int ix = static_cast<int>(std::floor(x0)); ix < std::min(img.width, static_cast<int>(std::ceil(x1))); ++ix) {
          const double wx = std::min<double>(ix + 1, x1) - std::max<double>(ix, x0);
          if (wx <= 0) continue;
          const double w = wx * wy;
          for (int c = 0; c < 3; ++c) acc[c] += w * img.at(ix, iy, c);
          wsum += w;
        }
      }
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = static_cast<std::uint8_t>(std::lround(std::clamp(acc[c] / wsum, 0.0, 255.0)));
    }
  }
  return out;
}

Image mirror_horizontal(const Image& img) {
  Image out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) out.set(img.width - 1 - x, y, img.rgb(x, y));
  return out;
}

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double hh = h * 6.0;
  const int sector = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

std::array<double, 3> rgb_to_hsv(double r, double g, double b) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double d = mx - mn;
  double h = 0;
  if (d > 0) {
    if (mx == r) h = (g - b) / d;
    else if (mx == g) h = 2.0 + (b - r) / d;
    else h = 4.0 + (r - g) / d;
    h /= 6.0;
    if (h < 0) h += 1.0;
  }
  return {h, mx > 0 ? d / mx : 0.0, mx};
}

}  // namespace b3d
