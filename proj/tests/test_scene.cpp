#include <algorithm>
#include <cmath>

#include "doctest.h"

#include "b3d/core/error.hpp"
#include "b3d/trainer/degrade.hpp"
#include "b3d/trainer/metrics.hpp"
#include "b3d/trainer/scene.hpp"

using namespace b3d;

namespace {

// Hue in [0,1) from 8-bit RGB, textbook formula.
double hue_of(int r, int g, int b) {
  const int mx = std::max({r, g, b}), mn = std::min({r, g, b});
  if (mx == mn) return -1.0;
  const double d = mx - mn;
  double h;
  if (mx == r)
    h = std::fmod((g - b) / d, 6.0);
  else if (mx == g)
    h = (b - r) / d + 2.0;
  else
    h = (r - g) / d + 4.0;
  h /= 6.0;
  return h < 0 ? h + 1.0 : h;
}

double circular_gap(double a, double b) {
  const double d = std::abs(a - b);
  return std::min(d, 1.0 - d);
}

bool is_background(const Image& im, int x, int y) {
  const auto p = im.rgb(x, y);
  return p[0] == 255 && p[1] == 255 && p[2] == 255;
}

ImageF checkerboard(int n) {
  ImageF im(n, n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      for (int c = 0; c < 3; ++c) im.at(x, y, c) = ((x + y) % 2) ? 0.9 : 0.1;
  return im;
}

ImageF filled(int n, double r, double g, double b) {
  ImageF im(n, n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      im.at(x, y, 0) = r;
      im.at(x, y, 1) = g;
      im.at(x, y, 2) = b;
    }
  return im;
}

}  // namespace

TEST_SUITE("scene") {
  TEST_CASE("rendering is deterministic per seed") {
    Rng a = make_rng(42), b = make_rng(42);
    const auto ra = render_toy_dataset(1, 16, a);
    const auto rb = render_toy_dataset(1, 16, b);
    REQUIRE(ra.size() == 1);
    for (int v = 0; v < 4; ++v) CHECK(ra[0].views[v].pixels == rb[0].views[v].pixels);
    CHECK(ra[0].record_id == rb[0].record_id);
    CHECK(ra[0].source == DataSource::rendered_asset);
    CHECK(ra[0].meta.contains("scene"));
  }

  TEST_CASE("sphere views are identical across azimuths") {
    for (double hue : {0.05, 0.4, 0.77})
      for (int size : {16, 24}) {
        const auto views = render_views({ShapeClass::sphere, hue, 0.7}, size);
        for (int v = 1; v < 4; ++v) CHECK(views[v] == views[0]);
        CHECK(consistency_metric(views).value == 0.0);
      }
  }

  TEST_CASE("cube pixels carry the scene hue") {
    for (double h : {0.0, 0.13, 0.5, 0.91}) {
      CAPTURE(h);
      const auto views = render_views({ShapeClass::cube, h, 0.8}, 16);
      int fg = 0;
      double worst = 0;
      for (const auto& im : views)
        for (int y = 0; y < im.height; ++y)
          for (int x = 0; x < im.width; ++x) {
            if (is_background(im, x, y)) continue;
            const auto p = im.rgb(x, y);
            worst = std::max(worst, circular_gap(hue_of(p[0], p[1], p[2]), h));
            ++fg;
          }
      CHECK(fg > 40);
      CHECK(worst <= 0.02);
    }
  }

  TEST_CASE("opposite cube views are mirror images") {
    const auto views = render_views({ShapeClass::cube, 0.3, 0.75}, 16);
    CHECK(mirror_horizontal(views[2]) == views[0]);
    CHECK(mirror_horizontal(views[3]) == views[1]);
  }

  TEST_CASE("each shape covers part of the view and leaves background") {
    for (auto shape : kAllShapes) {
      const Image im = render_view({shape, 0.6, 0.6}, 0, 16);
      int fg = 0;
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) fg += !is_background(im, x, y);
      CAPTURE(to_string(shape));
      CHECK(fg > 10);
      CHECK(fg < 200);
    }
  }

  TEST_CASE("conditions enumerate shape and hue bin") {
    for (int c = 0; c < kConditionCount; ++c) CHECK(condition_prototype(c).condition() == c);
    Rng rng = make_rng(3);
    for (int i = 0; i < 500; ++i) {
      const int c = i % kConditionCount;
      const ToyScene s = sample_scene(c, rng);
      CHECK(s.condition() == c);
      CHECK_NOTHROW(validate(s));
    }
    CHECK(scene_prompt({ShapeClass::torus, condition_prototype(4).hue, 0.5}) == "a violet torus");
  }

  TEST_CASE("scene metadata round-trips") {
    const ToyScene s{ShapeClass::cone, 0.37, 0.55};
    CHECK(scene_from_json(to_json(s)) == s);
  }

  TEST_CASE("parameter errors") {
    Rng rng = make_rng(0);
    CHECK_THROWS_AS(render_toy_dataset(1, 7, rng), ParameterError);
    CHECK_THROWS_AS(render_toy_dataset(0, 16, rng), ParameterError);
    CHECK_THROWS_AS(validate({ShapeClass::cube, 1.0, 0.5}), ParameterError);
    CHECK_THROWS_AS(validate({ShapeClass::cube, 0.5, 0.2}), ParameterError);
    CHECK_NOTHROW(validate({ShapeClass::cube, 0.5, 0.9}));
  }
}

TEST_SUITE("degrade") {
  TEST_CASE("zero sigma is the identity") {
    Rng rng = make_rng(1);
    const auto rec = render_toy_dataset(1, 16, rng)[0];
    const auto out = degrade_views(rec, 0.0, 3, rng);
    for (int v = 0; v < 4; ++v) CHECK(out.views[v] == rec.views[v]);
    CHECK(out.source == DataSource::synthetic_nvs_a);
  }

  TEST_CASE("no blurred views changes only the source tag") {
    Rng rng = make_rng(2);
    const auto rec = render_toy_dataset(1, 16, rng)[0];
    const auto out = degrade_views(rec, 2.0, 0, rng);
    for (int v = 0; v < 4; ++v) CHECK(out.views[v] == rec.views[v]);
    CHECK(out.source == DataSource::synthetic_nvs_a);
    CHECK(out.prompt == rec.prompt);
  }

  TEST_CASE("blur lowers the sharpness of every blurred view") {
    Rng rng = make_rng(3);
    for (const auto& rec : render_toy_dataset(8, 16, rng)) {
      const auto out = degrade_views(rec, 2.0, 3, rng);
      // the conditioning view stays sharp
      CHECK(out.views[0] == rec.views[0]);
      for (int v = 1; v < 4; ++v)
        CHECK(laplacian_variance(to_float(out.views[v])) < laplacian_variance(to_float(rec.views[v])));
    }
  }

  TEST_CASE("all four views can be blurred") {
    Rng rng = make_rng(4);
    const auto rec = render_toy_dataset(1, 16, rng)[0];
    const auto out = degrade_views(rec, 1.5, 4, rng);
    for (int v = 0; v < 4; ++v) CHECK_FALSE(out.views[v] == rec.views[v]);
  }

  TEST_CASE("blur keeps a constant image and mass") {
    const ImageF flat = filled(9, 0.25, 0.5, 0.75);
    const ImageF out = gaussian_blur(flat, 1.7);
    for (std::size_t i = 0; i < flat.data.size(); ++i) CHECK(out.data[i] == doctest::Approx(flat.data[i]).epsilon(1e-12));
  }

  TEST_CASE("invalid degradation arguments") {
    Rng rng = make_rng(5);
    const auto rec = render_toy_dataset(1, 16, rng)[0];
    CHECK_THROWS_AS(degrade_views(rec, -0.1, 3, rng), ParameterError);
    CHECK_THROWS_AS(degrade_views(rec, 1.0, 5, rng), ParameterError);
    CHECK_THROWS_AS(degrade_views(rec, 1.0, -1, rng), ParameterError);
  }
}

TEST_SUITE("metrics") {
  TEST_CASE("flat field has zero sharpness") {
    CHECK(laplacian_variance(filled(12, 0.3, 0.3, 0.3)) == 0.0);
  }

  TEST_CASE("checkerboard is sharper than its blurred copy") {
    const ImageF cb = checkerboard(16);
    CHECK(laplacian_variance(cb) > laplacian_variance(gaussian_blur(cb, 1.0)));
    // interior Laplacian is +-4 * 0.8 of luminance, alternating, so variance 3.2^2
    CHECK(laplacian_variance(cb) == doctest::Approx(3.2 * 3.2).epsilon(1e-9));
  }

  TEST_CASE("sharpness ignores a constant offset") {
    ImageF cb = checkerboard(16), shifted = cb;
    for (auto& v : shifted.data) v += 0.05;
    CHECK(laplacian_variance(shifted) == doctest::Approx(laplacian_variance(cb)).epsilon(1e-12));
  }

  TEST_CASE("identical views are perfectly consistent") {
    Rng rng = make_rng(6);
    const auto rec = render_toy_dataset(3, 16, rng)[2];
    Views same{rec.views[1], rec.views[1], rec.views[1], rec.views[1]};
    CHECK(consistency_metric(same).value == 0.0);
  }

  TEST_CASE("same-hue sphere views are consistent") {
    const auto views = render_views({ShapeClass::sphere, 0.6, 0.8}, 16);
    CHECK(consistency_metric(views).value < 0.05);
  }

  TEST_CASE("opposite hues are far apart") {
    const Image a = render_view({ShapeClass::cube, 0.0, 0.7}, 0, 16);
    const Image b = render_view({ShapeClass::cube, 0.5, 0.7}, 0, 16);
    const auto ha = foreground_histogram(to_float(a)), hb = foreground_histogram(to_float(b));
    double tv = 0;
    for (std::size_t i = 0; i < ha.size(); ++i) tv += std::abs(ha[i] - hb[i]);
    tv *= 0.5;
    CHECK(tv >= 0.95);
    const Views split{a, a, b, b};
    // four cross pairs at ~1 and two identical pairs at 0
    CHECK(consistency_metric(split).value >= 0.95 * 4.0 / 6.0);
  }

  TEST_CASE("a view with no foreground is flagged") {
    const auto views = render_views({ShapeClass::sphere, 0.2, 0.7}, 16);
    const Views with_blank{views[0], views[1], Image(16, 16), views[3]};
    const auto r = consistency_metric(with_blank);
    CHECK(r.flagged());
    REQUIRE(r.empty_views.size() == 1);
    CHECK(r.empty_views[0] == 2);
    CHECK(r.value == doctest::Approx(3.0 / 6.0));
  }

  TEST_CASE("consistency needs four views") {
    std::vector<ImageF> three(3, filled(4, 0.1, 0.2, 0.3));
    CHECK_THROWS_AS(consistency_metric(three), ShapeError);
  }
}
