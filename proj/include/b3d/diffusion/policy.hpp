#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "b3d/core/rng.hpp"

namespace b3d {

class NoiseSchedule;

enum class DataSource { rendered_asset, synthetic_nvs_a, synthetic_nvs_b, single_view_2d };

inline constexpr std::array<DataSource, 4> kAllSources = {
    DataSource::rendered_asset, DataSource::synthetic_nvs_a, DataSource::synthetic_nvs_b,
    DataSource::single_view_2d};

std::string_view to_string(DataSource source);
// Throws ConfigError on an unknown tag.
DataSource parse_source(std::string_view tag);

struct BoostRange {
  int lo = 0;
  int hi = 0;
  friend bool operator==(const BoostRange&, const BoostRange&) = default;
};

struct TimestepRange {
  int t_min = 0;
  int t_max = 0;
  std::optional<BoostRange> boost;
  double boost_prob = 0.0;

  // Number of integer timesteps in [t_min, t_max].
  int width() const noexcept { return t_max - t_min + 1; }
  friend bool operator==(const TimestepRange&, const TimestepRange&) = default;
};

// Per-source training timestep ranges (the timestep reschedule rule set).
class TimestepPolicy {
 public:
  void set(DataSource source, TimestepRange range) { entries_[source] = range; }
  void erase(DataSource source) { entries_.erase(source); }
  bool contains(DataSource source) const { return entries_.count(source) != 0; }
  // Throws PolicyError when the source has no entry.
  const TimestepRange& at(DataSource source) const;
  const std::map<DataSource, TimestepRange>& entries() const noexcept { return entries_; }

  bool allows(DataSource source, int t) const {
    const auto& r = at(source);
    return t >= r.t_min && t <= r.t_max;
  }

  friend bool operator==(const TimestepPolicy&, const TimestepPolicy&) = default;

 private:
  std::map<DataSource, TimestepRange> entries_;
};

// Single-view 2D data only at t in [0, 50]; synthetic multi-view data only at
// t in [synthetic_t_min, n_steps]; rendered assets anywhere, with extra mass on
// [50, 200].
TimestepPolicy default_policy(int synthetic_t_min = 200, int n_steps = 1000, double boost_prob = 0.3);

// Draws t uniformly on [t_min, t_max]; with probability boost_prob the draw is
// instead uniform on the boost range.
int sample_timestep(const TimestepPolicy& policy, DataSource source, Rng& rng);

struct ValidationResult {
  std::vector<std::string> violations;
  bool ok() const noexcept { return violations.empty(); }
};

ValidationResult validate_policy(const TimestepPolicy& policy, int n_steps);
ValidationResult validate_policy(const TimestepPolicy& policy, const NoiseSchedule& schedule);

}  // namespace b3d
