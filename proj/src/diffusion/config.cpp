#include "b3d/diffusion/config.hpp"

#include <fmt/format.h>

#include "b3d/core/error.hpp"

namespace b3d {

using nlohmann::json;

namespace {

template <class T>
T require(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError(fmt::format("{}.{} is missing", where, key));
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("{}.{}: {}", where, key, e.what()));
  }
}

}  // namespace

json schedule_to_json(const ScheduleSpec& spec) {
  return json{{"kind", std::string(to_string(spec.kind))},
              {"beta_start", spec.beta_start},
              {"beta_end", spec.beta_end},
              {"n_steps", spec.n_steps}};
}

ScheduleSpec schedule_from_json(const json& j) {
  ScheduleSpec spec;
  if (j.contains("kind")) spec.kind = parse_schedule_kind(require<std::string>(j, "kind", "schedule"));
  if (j.contains("beta_start")) spec.beta_start = require<double>(j, "beta_start", "schedule");
  if (j.contains("beta_end")) spec.beta_end = require<double>(j, "beta_end", "schedule");
  if (j.contains("n_steps")) spec.n_steps = require<int>(j, "n_steps", "schedule");
  return spec;
}

json policy_to_json(const TimestepPolicy& policy) {
  json out = json::object();
  for (const auto& [source, r] : policy.entries()) {
    json e{{"t_min", r.t_min}, {"t_max", r.t_max}, {"boost_prob", r.boost_prob}};
    if (r.boost) {
      e["boost_lo"] = r.boost->lo;
      e["boost_hi"] = r.boost->hi;
    }
    out[std::string(to_string(source))] = e;
  }
  return out;
}

TimestepPolicy policy_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("policy must be an object keyed by data source");
  TimestepPolicy p;
  for (const auto& [key, e] : j.items()) {
    const DataSource source = parse_source(key);
    const std::string where = "policy." + key;
    TimestepRange r;
    r.t_min = require<int>(e, "t_min", where);
    r.t_max = require<int>(e, "t_max", where);
    r.boost_prob = e.contains("boost_prob") ? require<double>(e, "boost_prob", where) : 0.0;
    const bool has_lo = e.contains("boost_lo"), has_hi = e.contains("boost_hi");
    if (has_lo != has_hi) throw ConfigError(fmt::format("{}: boost_lo and boost_hi must be given together", where));
    if (has_lo) r.boost = BoostRange{require<int>(e, "boost_lo", where), require<int>(e, "boost_hi", where)};
    p.set(source, r);
  }
  return p;
}

}  // namespace b3d
