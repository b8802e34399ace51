#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace b3d {

using Rgb8 = std::array<std::uint8_t, 3>;

// 8-bit interleaved RGB image, row-major.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, Rgb8 fill = {255, 255, 255});

  std::uint8_t& at(int x, int y, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int x, int y, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  Rgb8 rgb(int x, int y) const { return {at(x, y, 0), at(x, y, 1), at(x, y, 2)}; }
  void set(int x, int y, Rgb8 v) {
    for (int c = 0; c < 3; ++c) at(x, y, c) = v[c];
  }
  bool empty() const noexcept { return width == 0 || height == 0; }

  friend bool operator==(const Image&, const Image&) = default;
};

// Floating point RGB image with channels in [0,1].
struct ImageF {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  ImageF() = default;
  ImageF(int w, int h, double fill = 1.0) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

  double& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
};

ImageF to_float(const Image& img);
Image to_u8(const ImageF& img);

// Rec. 601 luma in [0,1], row-major.
std::vector<double> luminance(const ImageF& img);

// Area-weighted resampling; exact inverse of integer-factor block upscaling.
Image resize_area(const Image& img, int width, int height);

Image mirror_horizontal(const Image& img);

// HSV <-> RGB, all components in [0,1].
std::array<double, 3> hsv_to_rgb(double h, double s, double v);
std::array<double, 3> rgb_to_hsv(double r, double g, double b);

}  // namespace b3d
