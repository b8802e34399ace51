#pragma once

#include <nlohmann/json.hpp>

#include "b3d/diffusion/policy.hpp"
#include "b3d/diffusion/schedule.hpp"

namespace b3d {

// Key-value tree layout:
//   schedule.{kind, beta_start, beta_end, n_steps}
//   policy.<source>.{t_min, t_max, boost_lo, boost_hi, boost_prob}
nlohmann::json schedule_to_json(const ScheduleSpec& spec);
ScheduleSpec schedule_from_json(const nlohmann::json& j);

nlohmann::json policy_to_json(const TimestepPolicy& policy);
TimestepPolicy policy_from_json(const nlohmann::json& j);

}  // namespace b3d
