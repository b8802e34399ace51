#pragma once

#include <span>
#include <string_view>
#include <vector>

namespace b3d {

enum class ScheduleKind { linear, scaled_linear };

std::string_view to_string(ScheduleKind kind);
ScheduleKind parse_schedule_kind(std::string_view text);

struct ScheduleSpec {
  ScheduleKind kind = ScheduleKind::scaled_linear;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  int n_steps = 1000;

  friend bool operator==(const ScheduleSpec&, const ScheduleSpec&) = default;
};

// Discrete DDPM noise schedule over t = 0..n_steps with alpha_bar(0) = 1.
//
// A schedule may be a respaced view of a longer one (strided sampling): then
// step k of this schedule corresponds to model timestep model_timestep(k) of
// the parent, and betas are re-derived so that alpha_bar(k) equals the
// parent's alpha_bar at that timestep.
class NoiseSchedule {
 public:
  ScheduleKind kind() const noexcept { return spec_.kind; }
  const ScheduleSpec& spec() const noexcept { return spec_; }
  int n_steps() const noexcept { return static_cast<int>(betas_.size()); }

  // t in 1..n_steps.
  double beta(int t) const { return betas_[static_cast<std::size_t>(t - 1)]; }
  // t in 0..n_steps.
  double alpha_bar(int t) const { return alpha_bars_[static_cast<std::size_t>(t)]; }
  int model_timestep(int t) const { return model_timesteps_[static_cast<std::size_t>(t)]; }

  std::span<const double> betas() const noexcept { return betas_; }
  std::span<const double> alpha_bars() const noexcept { return alpha_bars_; }

 private:
  friend NoiseSchedule build_schedule(const ScheduleSpec& spec);
  friend NoiseSchedule respace(const NoiseSchedule& parent, std::span<const int> timesteps);

  ScheduleSpec spec_;
  std::vector<double> betas_;
  std::vector<double> alpha_bars_;
  std::vector<int> model_timesteps_;
};

NoiseSchedule build_schedule(const ScheduleSpec& spec);

inline NoiseSchedule build_schedule(ScheduleKind kind, double beta_start, double beta_end, int n_steps) {
  return build_schedule(ScheduleSpec{kind, beta_start, beta_end, n_steps});
}

// `timesteps` strictly increasing within [1, parent.n_steps()].
NoiseSchedule respace(const NoiseSchedule& parent, std::span<const int> timesteps);

// n evenly strided timesteps ending at parent.n_steps().
std::vector<int> strided_timesteps(int n_steps, int n_reverse_steps);

}  // namespace b3d
