#pragma once

#include <array>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "b3d/core/record.hpp"
#include "b3d/core/rng.hpp"

namespace b3d {

enum class ShapeClass { cube, sphere, cone, torus };

inline constexpr std::array<ShapeClass, 4> kAllShapes = {ShapeClass::cube, ShapeClass::sphere, ShapeClass::cone,
                                                         ShapeClass::torus};
inline constexpr int kHueBins = 6;
inline constexpr int kConditionCount = static_cast<int>(kAllShapes.size()) * kHueBins;
inline constexpr std::array<int, 4> kAzimuthsDeg = {0, 90, 180, 270};
inline constexpr double kElevationDeg = 20.0;

std::string_view to_string(ShapeClass shape);
ShapeClass parse_shape(std::string_view text);

// Procedural stand-in for a rendered 3D asset.
struct ToyScene {
  ShapeClass shape = ShapeClass::sphere;
  double hue = 0.0;   // [0,1)
  double size = 0.6;  // (0.2, 0.9], fraction of the half view extent

  int condition() const;  // shape index * kHueBins + hue bin
  friend bool operator==(const ToyScene&, const ToyScene&) = default;
};

int hue_bin(double hue);
std::string_view hue_name(int bin);
std::string scene_prompt(const ToyScene& scene);
// Condition index -> (shape, hue bin centre).
ToyScene condition_prototype(int condition);

void validate(const ToyScene& scene);
nlohmann::json to_json(const ToyScene& scene);
ToyScene scene_from_json(const nlohmann::json& j);

// Orthographic render on a white background, vertical key light, no
// anti-aliasing (every foreground pixel carries the scene hue exactly up to
// 8-bit rounding).
Image render_view(const ToyScene& scene, int azimuth_deg, int view_size);
Views render_views(const ToyScene& scene, int view_size);

// Scene i gets condition i mod kConditionCount with jittered hue and size.
ToyScene sample_scene(int condition, Rng& rng);

// Sharp 4-view records tagged RenderedAsset with scene metadata; a pure
// function of rng state.
std::vector<MultiViewRecord> render_toy_dataset(int n_scenes, int view_size, Rng& rng);

}  // namespace b3d
