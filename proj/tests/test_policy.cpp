#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "doctest.h"

#include "b3d/core/error.hpp"
#include "b3d/core/stats.hpp"
#include "b3d/diffusion/config.hpp"
#include "b3d/diffusion/policy.hpp"
#include "b3d/diffusion/schedule.hpp"

using namespace b3d;

namespace {

bool mentions(const ValidationResult& v, std::string_view needle) {
  return std::any_of(v.violations.begin(), v.violations.end(),
                     [&](const std::string& s) { return s.find(needle) != std::string::npos; });
}

}  // namespace

TEST_SUITE("policy") {
  TEST_CASE("default ranges") {
    const auto p = default_policy();
    CHECK(p.at(DataSource::single_view_2d).t_min == 0);
    CHECK(p.at(DataSource::single_view_2d).t_max == 50);
    for (auto s : {DataSource::synthetic_nvs_a, DataSource::synthetic_nvs_b}) {
      CHECK(p.at(s).t_min == 200);
      CHECK(p.at(s).t_max == 1000);
    }
    const auto& r = p.at(DataSource::rendered_asset);
    CHECK(r.t_min == 0);
    CHECK(r.t_max == 1000);
    REQUIRE(r.boost.has_value());
    CHECK(r.boost->lo == 50);
    CHECK(r.boost->hi == 200);
    CHECK(r.boost_prob == 0.3);
    CHECK(validate_policy(p, build_schedule(ScheduleSpec{})).ok());
  }

  TEST_CASE("draws never leave the source range") {
    const auto p = default_policy();
    for (auto s : kAllSources) {
      Rng rng = make_rng(derive_seed(21, static_cast<std::uint64_t>(s)));
      const auto& r = p.at(s);
      int lo = 1 << 30, hi = -1;
      for (int i = 0; i < 1'000'000; ++i) {
        const int t = sample_timestep(p, s, rng);
        lo = std::min(lo, t);
        hi = std::max(hi, t);
      }
      CHECK(lo >= r.t_min);
      CHECK(hi <= r.t_max);
      // both ends are reachable
      CHECK(lo == r.t_min);
      CHECK(hi == r.t_max);
    }
  }

  TEST_CASE("no boost means uniform draws") {
    TimestepPolicy p;
    p.set(DataSource::synthetic_nvs_a, {200, 1000, std::nullopt, 0.0});
    Rng rng = make_rng(22);
    const int n = 100000, bins = 20, width = 801;
    std::vector<double> obs(bins, 0.0), prob(bins, 0.0);
    auto bin_of = [&](int t) { return (t - 200) * bins / width; };
    for (int t = 200; t <= 1000; ++t) prob[static_cast<std::size_t>(bin_of(t))] += 1.0 / width;
    for (int i = 0; i < n; ++i) obs[static_cast<std::size_t>(bin_of(sample_timestep(p, DataSource::synthetic_nvs_a, rng)))] += 1;
    const double stat = chi_square_statistic(obs, prob);
    CHECK(chi_square_sf(stat, bins - 1) > 0.01);
  }

  TEST_CASE("boost mass on the rendered source") {
    const auto p = default_policy();
    Rng rng = make_rng(23);
    const int n = 100000;
    double in = 0;
    for (int i = 0; i < n; ++i) {
      const int t = sample_timestep(p, DataSource::rendered_asset, rng);
      in += (t >= 50 && t <= 200);
    }
    const double expected = 0.3 + 0.7 * (151.0 / 1001.0);
    const std::array<double, 2> obs{in, n - in}, prob{expected, 1.0 - expected};
    CHECK(chi_square_sf(chi_square_statistic(obs, prob), 1) > 0.01);
  }

  TEST_CASE("missing source raises a policy error") {
    TimestepPolicy p;
    Rng rng = make_rng(0);
    CHECK_THROWS_AS(sample_timestep(p, DataSource::rendered_asset, rng), PolicyError);
  }

  TEST_CASE("validation lists violations") {
    TimestepPolicy p;
    p.set(DataSource::single_view_2d, {50, 50, std::nullopt, 0.0});
    CHECK(mentions(validate_policy(p, 1000), "empty range"));

    TimestepPolicy q;
    q.set(DataSource::rendered_asset, {0, 1000, BoostRange{900, 1100}, 0.3});
    const auto v = validate_policy(q, 1000);
    CHECK(mentions(v, "RenderedAsset"));
    CHECK(mentions(v, "boost range"));

    TimestepPolicy r;
    r.set(DataSource::synthetic_nvs_b, {300, 200, std::nullopt, 1.5});
    r.set(DataSource::synthetic_nvs_a, {-1, 2000, std::nullopt, 0.0});
    const auto w = validate_policy(r, 1000);
    // boost_prob 1.5 is both out of range and set without a boost range
    CHECK(w.violations.size() == 5);
    CHECK(mentions(w, "inverted range"));
    CHECK(mentions(w, "boost_prob"));
    CHECK(mentions(w, "below 0"));
    CHECK(mentions(w, "exceeds n_steps"));
  }

  TEST_CASE("source tags round-trip and unknown tags are rejected") {
    for (auto s : kAllSources) CHECK(parse_source(to_string(s)) == s);
    CHECK_THROWS_AS(parse_source("SyntheticNVS-C"), ConfigError);
  }
}

TEST_SUITE("diffusion config") {
  TEST_CASE("schedule and policy round-trip through the config tree") {
    const ScheduleSpec spec{ScheduleKind::linear, 2e-4, 0.03, 500};
    CHECK(schedule_from_json(schedule_to_json(spec)) == spec);
    const auto p = default_policy(300, 500, 0.25);
    CHECK(policy_from_json(policy_to_json(p)) == p);
    const auto j = schedule_to_json(spec);
    for (const char* key : {"kind", "beta_start", "beta_end", "n_steps"}) CHECK(j.contains(key));
    const auto pj = policy_to_json(p);
    for (const char* key : {"t_min", "t_max", "boost_lo", "boost_hi", "boost_prob"}) CHECK(pj["RenderedAsset"].contains(key));
  }

  TEST_CASE("omitted schedule keys take defaults") {
    CHECK(schedule_from_json(nlohmann::json::object()) == ScheduleSpec{});
  }

  TEST_CASE("bad documents raise config errors naming the path") {
    auto j = schedule_to_json(ScheduleSpec{});
    j["beta_end"] = "steep";
    try {
      schedule_from_json(j);
      FAIL("expected a ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("beta_end") != std::string::npos);
    }
    auto pj = policy_to_json(default_policy());
    pj["Mystery"] = pj["RenderedAsset"];
    CHECK_THROWS_AS(policy_from_json(pj), ConfigError);
    auto pk = policy_to_json(default_policy());
    pk["RenderedAsset"]["t_max"] = "lots";
    CHECK_THROWS_AS(policy_from_json(pk), ConfigError);
  }
}
