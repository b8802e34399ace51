#include "b3d/diffusion/schedule.hpp"

#include <cmath>

#include <fmt/format.h>

#include "b3d/core/error.hpp"

namespace b3d {

std::string_view to_string(ScheduleKind kind) {
  return kind == ScheduleKind::linear ? "linear" : "scaled-linear";
}

ScheduleKind parse_schedule_kind(std::string_view text) {
  if (text == "linear") return ScheduleKind::linear;
  if (text == "scaled-linear" || text == "scaled_linear") return ScheduleKind::scaled_linear;
  throw ConfigError(fmt::format("schedule.kind: unknown schedule kind '{}'", text));
}

NoiseSchedule build_schedule(const ScheduleSpec& spec) {
  if (spec.n_steps < 1) throw ParameterError(fmt::format("n_steps must be >= 1 (got {})", spec.n_steps));
  if (!(spec.beta_start > 0.0 && spec.beta_start < 1.0))
    throw ParameterError(fmt::format("beta_start must lie in (0,1) (got {})", spec.beta_start));
  if (!(spec.beta_end > 0.0 && spec.beta_end < 1.0))
    throw ParameterError(fmt::format("beta_end must lie in (0,1) (got {})", spec.beta_end));
  if (!(spec.beta_start < spec.beta_end))
    throw ParameterError(
        fmt::format("beta_end must exceed beta_start (got beta_start={}, beta_end={})", spec.beta_start, spec.beta_end));

  const int n = spec.n_steps;
  NoiseSchedule s;
  s.spec_ = spec;
  s.betas_.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double frac = n == 1 ? 0.0 : static_cast<double>(i) / (n - 1);
    double beta;
    if (spec.kind == ScheduleKind::linear) {
      beta = spec.beta_start + (spec.beta_end - spec.beta_start) * frac;
    } else {
      const double a = std::sqrt(spec.beta_start), b = std::sqrt(spec.beta_end);
      const double r = a + (b - a) * frac;
      beta = r * r;
    }
    s.betas_[static_cast<std::size_t>(i)] = beta;
  }
  // Pin the endpoints so beta_1 and beta_N are the configured values exactly.
  s.betas_.front() = spec.beta_start;
  if (n > 1) s.betas_.back() = spec.beta_end;

  s.alpha_bars_.resize(static_cast<std::size_t>(n) + 1);
  s.alpha_bars_[0] = 1.0;
  for (int t = 1; t <= n; ++t) s.alpha_bars_[t] = s.alpha_bars_[t - 1] * (1.0 - s.betas_[t - 1]);
  s.model_timesteps_.resize(static_cast<std::size_t>(n) + 1);
  for (int t = 0; t <= n; ++t) s.model_timesteps_[t] = t;
  return s;
}

NoiseSchedule respace(const NoiseSchedule& parent, std::span<const int> timesteps) {
  if (timesteps.empty()) throw ParameterError("respace: empty timestep list");
  NoiseSchedule s;
  s.spec_ = parent.spec_;
  s.spec_.n_steps = static_cast<int>(timesteps.size());
  s.alpha_bars_.push_back(1.0);
  s.model_timesteps_.push_back(0);
  int prev = 0;
  for (int t : timesteps) {
    if (t <= prev || t > parent.n_steps())
      throw ParameterError(fmt::format("respace: timesteps must be strictly increasing within [1, {}]", parent.n_steps()));
    const double ab = parent.alpha_bar(t);
    s.betas_.push_back(1.0 - ab / s.alpha_bars_.back());
    s.alpha_bars_.push_back(ab);
    s.model_timesteps_.push_back(t);
    prev = t;
  }
  return s;
}

std::vector<int> strided_timesteps(int n_steps, int n_reverse_steps) {
  if (n_reverse_steps < 1 || n_reverse_steps > n_steps)
    throw RangeError(fmt::format("n_reverse_steps must lie in [1, {}] (got {})", n_steps, n_reverse_steps));
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(n_reverse_steps));
  for (int k = 1; k <= n_reverse_steps; ++k) {
    out.push_back(static_cast<int>((static_cast<long long>(k) * n_steps) / n_reverse_steps));
  }
  return out;
}

}  // namespace b3d
