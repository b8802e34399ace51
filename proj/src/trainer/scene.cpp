#include "b3d/trainer/scene.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "b3d/core/error.hpp"

namespace b3d {

namespace {

struct Vec3 {
  double x, y, z;
};

// Radially symmetric terms are written as (x*x + z*z) so a quarter-turn about
// the vertical axis (x,z) -> (z,-x) reproduces every value bit for bit.
double radial(const Vec3& p) { return std::sqrt(p.x * p.x + p.z * p.z); }

double sdf(const ToyScene& s, const Vec3& p) {
  const double r = s.size;
  switch (s.shape) {
    case ShapeClass::sphere:
      return std::sqrt((p.x * p.x + p.z * p.z) + p.y * p.y) - r;
    case ShapeClass::cube: {
      const double b = 0.62 * r;
      const double qx = std::abs(p.x) - b, qy = std::abs(p.y) - b, qz = std::abs(p.z) - b;
      const double ox = std::max(qx, 0.0), oy = std::max(qy, 0.0), oz = std::max(qz, 0.0);
      const double outside = std::sqrt((ox * ox + oz * oz) + oy * oy);
      const double inside = std::min(std::max(qx, std::max(qy, qz)), 0.0);
      return outside + inside;
    }
    case ShapeClass::cone: {
      const double h = 1.6 * r, base = 0.85 * r;
      const double slant = std::sqrt(h * h + base * base);
      const double cos_a = h / slant, sin_a = base / slant;
      const double side = radial(p) * cos_a + (p.y - 0.5 * h) * sin_a;
      return std::max(side, -0.5 * h - p.y);
    }
    case ShapeClass::torus: {
      const double major = 0.68 * r, minor = 0.32 * r;
      const double qx = radial(p) - major;
      return std::sqrt(qx * qx + p.y * p.y) - minor;
    }
  }
  return 1.0;
}

// Exact rotation about the vertical axis for multiples of 90 degrees.
Vec3 rotate_y(const Vec3& p, int azimuth_deg) {
  switch (((azimuth_deg % 360) + 360) % 360) {
    case 0: return p;
    case 90: return {p.z, p.y, -p.x};
    case 180: return {-p.x, p.y, -p.z};
    case 270: return {-p.z, p.y, p.x};
    default: {
      const double a = azimuth_deg * M_PI / 180.0;
      const double c = std::cos(a), s = std::sin(a);
      return {c * p.x + s * p.z, p.y, -s * p.x + c * p.z};
    }
  }
}

}  // namespace

std::string_view to_string(ShapeClass shape) {
  switch (shape) {
    case ShapeClass::cube: return "cube";
    case ShapeClass::sphere: return "sphere";
    case ShapeClass::cone: return "cone";
    case ShapeClass::torus: return "torus";
  }
  return "?";
}

ShapeClass parse_shape(std::string_view text) {
  for (auto s : kAllShapes)
    if (to_string(s) == text) return s;
  throw ConfigError(fmt::format("unknown shape class '{}'", text));
}

int hue_bin(double hue) {
  const double h = hue - std::floor(hue);
  return std::min(kHueBins - 1, static_cast<int>(h * kHueBins));
}

std::string_view hue_name(int bin) {
  static constexpr std::array<std::string_view, kHueBins> names = {"orange", "lime", "green", "azure", "violet", "rose"};
  return names.at(static_cast<std::size_t>(bin));
}

std::string scene_prompt(const ToyScene& scene) {
  return fmt::format("a {} {}", hue_name(hue_bin(scene.hue)), to_string(scene.shape));
}

int ToyScene::condition() const { return static_cast<int>(shape) * kHueBins + hue_bin(hue); }

ToyScene condition_prototype(int condition) {
  if (condition < 0 || condition >= kConditionCount)
    throw RangeError(fmt::format("condition {} outside [0, {})", condition, kConditionCount));
  return ToyScene{kAllShapes[static_cast<std::size_t>(condition / kHueBins)],
                  (condition % kHueBins + 0.5) / kHueBins, 0.65};
}

void validate(const ToyScene& scene) {
  if (!(scene.hue >= 0.0 && scene.hue < 1.0)) throw ParameterError(fmt::format("scene hue {} outside [0,1)", scene.hue));
  if (!(scene.size > 0.2 && scene.size <= 0.9))
    throw ParameterError(fmt::format("scene size {} outside (0.2, 0.9]", scene.size));
}

nlohmann::json to_json(const ToyScene& scene) {
  return {{"shape", std::string(to_string(scene.shape))},
          {"hue", scene.hue},
          {"size", scene.size},
          {"condition", scene.condition()}};
}

ToyScene scene_from_json(const nlohmann::json& j) {
  try {
    ToyScene s{parse_shape(j.at("shape").get<std::string>()), j.at("hue").get<double>(), j.at("size").get<double>()};
    validate(s);
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("scene metadata: {}", e.what()));
  }
}

Image render_view(const ToyScene& scene, int azimuth_deg, int view_size) {
  validate(scene);
  if (view_size < 1) throw ParameterError("view_size must be positive");
  const double el = kElevationDeg * M_PI / 180.0;
  const double se = std::sin(el), ce = std::cos(el);
  constexpr double kDistance = 3.0, kFar = 6.0, kHit = 1e-5, kNormalStep = 1e-4;
  constexpr int kMaxSteps = 160;
  // Camera frame: right (1,0,0), up (0,ce,se), forward (0,-se,ce).
  const Vec3 dir_cam{0.0, -se, ce};
  const Vec3 dir = rotate_y(dir_cam, azimuth_deg);

  Image img(view_size, view_size);
  for (int j = 0; j < view_size; ++j) {
    // Integer numerators make column i and its mirror exact negatives.
    const double v = static_cast<double>(view_size - 2 * j - 1) / view_size;
    for (int i = 0; i < view_size; ++i) {
      const double u = static_cast<double>(2 * i + 1 - view_size) / view_size;
      const Vec3 origin = rotate_y(Vec3{u, kDistance * se + v * ce, -kDistance * ce + v * se}, azimuth_deg);
      double t = 0.0;
      bool hit = false;
      Vec3 p{};
      for (int step = 0; step < kMaxSteps && t < kFar; ++step) {
        p = {origin.x + t * dir.x, origin.y + t * dir.y, origin.z + t * dir.z};
        const double d = sdf(scene, p);
        if (d < kHit) {
          hit = true;
          break;
        }
        t += d;
      }
      if (!hit) continue;
      const double gx = sdf(scene, {p.x + kNormalStep, p.y, p.z}) - sdf(scene, {p.x - kNormalStep, p.y, p.z});
      const double gy = sdf(scene, {p.x, p.y + kNormalStep, p.z}) - sdf(scene, {p.x, p.y - kNormalStep, p.z});
      const double gz = sdf(scene, {p.x, p.y, p.z + kNormalStep}) - sdf(scene, {p.x, p.y, p.z - kNormalStep});
      const double norm = std::sqrt((gx * gx + gz * gz) + gy * gy);
      const double ny = norm > 0 ? gy / norm : 0.0;
      const double value = 0.42 + 0.58 * std::max(0.0, ny);
      const auto rgb = hsv_to_rgb(scene.hue, 0.85, value);
      img.set(i, j,
              {static_cast<std::uint8_t>(std::lround(rgb[0] * 255.0)),
               static_cast<std::uint8_t>(std::lround(rgb[1] * 255.0)),
               static_cast<std::uint8_t>(std::lround(rgb[2] * 255.0))});
    }
  }
  return img;
}

Views render_views(const ToyScene& scene, int view_size) {
  Views views;
  for (std::size_t k = 0; k < kAzimuthsDeg.size(); ++k) views[k] = render_view(scene, kAzimuthsDeg[k], view_size);
  return views;
}

ToyScene sample_scene(int condition, Rng& rng) {
  ToyScene s = condition_prototype(condition);
  const double half_bin = 0.5 / kHueBins;
  s.hue = s.hue + (2.0 * uniform01(rng) - 1.0) * 0.6 * half_bin;
  s.size = 0.5 + 0.35 * uniform01(rng);
  return s;
}

std::vector<MultiViewRecord> render_toy_dataset(int n_scenes, int view_size, Rng& rng) {
  if (n_scenes < 1) throw ParameterError(fmt::format("n_scenes must be >= 1 (got {})", n_scenes));
  if (view_size < 8) throw ParameterError(fmt::format("view_size must be >= 8 (got {})", view_size));
  std::vector<MultiViewRecord> out;
  out.reserve(static_cast<std::size_t>(n_scenes));
  for (int i = 0; i < n_scenes; ++i) {
    const ToyScene scene = sample_scene(i % kConditionCount, rng);
    MultiViewRecord r;
    r.source = DataSource::rendered_asset;
    r.views = render_views(scene, view_size);
    r.prompt = scene_prompt(scene);
    r.stage = Stage::assembled;
    r.provenance.generator = "procedural-renderer";
    r.meta["scene"] = to_json(scene);
    seal(r);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace b3d
