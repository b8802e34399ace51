#include "b3d/diffusion/policy.hpp"

#include <fmt/format.h>

#include "b3d/core/error.hpp"
#include "b3d/diffusion/schedule.hpp"

namespace b3d {

std::string_view to_string(DataSource source) {
  switch (source) {
    case DataSource::rendered_asset: return "RenderedAsset";
    case DataSource::synthetic_nvs_a: return "SyntheticNVS-A";
    case DataSource::synthetic_nvs_b: return "SyntheticNVS-B";
    case DataSource::single_view_2d: return "SingleView2D";
  }
  return "?";
}

DataSource parse_source(std::string_view tag) {
  for (auto s : kAllSources)
    if (to_string(s) == tag) return s;
  throw ConfigError(fmt::format("unknown data source tag '{}'", tag));
}

const TimestepRange& TimestepPolicy::at(DataSource source) const {
  auto it = entries_.find(source);
  if (it == entries_.end()) throw PolicyError(fmt::format("timestep policy has no entry for {}", to_string(source)));
  return it->second;
}

TimestepPolicy default_policy(int synthetic_t_min, int n_steps, double boost_prob) {
  TimestepPolicy p;
  p.set(DataSource::single_view_2d, {0, 50, std::nullopt, 0.0});
  p.set(DataSource::synthetic_nvs_a, {synthetic_t_min, n_steps, std::nullopt, 0.0});
  p.set(DataSource::synthetic_nvs_b, {synthetic_t_min, n_steps, std::nullopt, 0.0});
  p.set(DataSource::rendered_asset, {0, n_steps, BoostRange{50, 200}, boost_prob});
  return p;
}

int sample_timestep(const TimestepPolicy& policy, DataSource source, Rng& rng) {
  const TimestepRange& r = policy.at(source);
  if (r.boost && r.boost_prob > 0.0 && uniform01(rng) < r.boost_prob) {
    return static_cast<int>(uniform_int(rng, r.boost->lo, r.boost->hi));
  }
  return static_cast<int>(uniform_int(rng, r.t_min, r.t_max));
}

ValidationResult validate_policy(const TimestepPolicy& policy, int n_steps) {
  ValidationResult res;
  for (const auto& [source, r] : policy.entries()) {
    const auto name = to_string(source);
    if (r.t_min == r.t_max) {
      res.violations.push_back(fmt::format("{}: empty range [{}, {}]", name, r.t_min, r.t_max));
    } else if (r.t_min > r.t_max) {
      res.violations.push_back(fmt::format("{}: inverted range [{}, {}]", name, r.t_min, r.t_max));
    }
    if (r.t_min < 0) res.violations.push_back(fmt::format("{}: t_min {} below 0", name, r.t_min));
    if (r.t_max > n_steps) res.violations.push_back(fmt::format("{}: t_max {} exceeds n_steps {}", name, r.t_max, n_steps));
    if (!(r.boost_prob >= 0.0 && r.boost_prob <= 1.0))
      res.violations.push_back(fmt::format("{}: boost_prob {} outside [0,1]", name, r.boost_prob));
    if (r.boost) {
      if (r.boost->lo > r.boost->hi)
        res.violations.push_back(fmt::format("{}: inverted boost range [{}, {}]", name, r.boost->lo, r.boost->hi));
      if (r.boost->lo < r.t_min || r.boost->hi > r.t_max)
        res.violations.push_back(fmt::format("{}: boost range [{}, {}] outside [{}, {}]", name, r.boost->lo,
                                             r.boost->hi, r.t_min, r.t_max));
    } else if (r.boost_prob > 0.0) {
      res.violations.push_back(fmt::format("{}: boost_prob {} set without a boost range", name, r.boost_prob));
    }
  }
  return res;
}

ValidationResult validate_policy(const TimestepPolicy& policy, const NoiseSchedule& schedule) {
  return validate_policy(policy, schedule.n_steps());
}

}  // namespace b3d
