#include "b3d/cli/run_config.hpp"

#include <cstdlib>
#include <set>
#include <thread>

#include <fmt/format.h>

#include "b3d/core/codec.hpp"
#include "b3d/core/error.hpp"
#include "b3d/core/rng.hpp"
#include "b3d/diffusion/config.hpp"
#include "b3d/pipeline/pipeline.hpp"
#include "b3d/pipeline/backend.hpp"

namespace b3d {

using nlohmann::json;

RunConfig::RunConfig() {
  trainer.config = sweep_base_config();
  trainer.config.source_mix = {{DataSource::rendered_asset, 0.4}, {DataSource::synthetic_nvs_a, 0.6}};
}

int RunConfig::effective_jobs() const {
  if (jobs > 0) return jobs;
  return std::max(1u, std::thread::hardware_concurrency());
}

TrainConfig RunConfig::train_config() const {
  TrainConfig tc = trainer.config;
  tc.schedule = schedule;
  tc.policy = policy;
  tc.seed = derive_seed(seed, hash_string("train"));
  return tc;
}

SweepConfig RunConfig::sweep_config() const {
  SweepConfig s = sweep;
  s.base.model = trainer.config.model;
  s.base.schedule = schedule;
  return s;
}

void RunConfig::validate() const {
  const NoiseSchedule sched = [&] {
    try {
      return build_schedule(schedule);
    } catch (const Error& e) {
      throw ConfigError(fmt::format("schedule: {}", e.what()));
    }
  }();
  if (const auto v = validate_policy(policy, sched); !v.ok()) throw ConfigError(fmt::format("policy: {}", v.violations.front()));
  try {
    train_config().validate();
  } catch (const Error& e) {
    throw ConfigError(fmt::format("trainer: {}", e.what()));
  }
  if (trainer.n_clean_scenes < 1 || trainer.n_synthetic_scenes < 0 || trainer.n_blurred < 0 || trainer.n_blurred > 4 ||
      trainer.blur_sigma < 0 || trainer.samples_per_condition < 0 || trainer.n_reverse_steps < 1 ||
      trainer.n_reverse_steps > schedule.n_steps)
    throw ConfigError("trainer data or sampling settings out of range");

  for (int T : sweep.t_values)
    if (T < 0 || T > schedule.n_steps) throw ConfigError(fmt::format("sweep T={} outside [0, {}]", T, schedule.n_steps));
  if (sweep.t_values.empty() || sweep.seeds.empty()) throw ConfigError("sweep needs at least one T and one seed");
  if (sweep.clean_fraction <= 0 || sweep.clean_fraction > 1) throw ConfigError("sweep.clean_fraction must lie in (0, 1]");
  if (sweep.base.total_steps < 0 || !(sweep.base.learning_rate > 0)) throw ConfigError("sweep steps/learning rate out of range");
  if (sweep.n_reverse_steps < 1 || sweep.n_reverse_steps > schedule.n_steps)
    throw ConfigError("sweep.n_reverse_steps out of range");

  PipelineConfig pc;
  pc.prompt_bank = pipeline.prompt_bank.empty() ? "prompts.txt" : pipeline.prompt_bank;
  pc.output_root = output_root;
  pc.target_count = pipeline.target_count;
  pc.batch_size = pipeline.batch_size;
  pc.view_size = pipeline.view_size;
  pc.source = pipeline.source;
  pc.workers = effective_jobs();
  pc.validate();
  if (pipeline.offline_blurred_views < 0 || pipeline.offline_blurred_views > 4 || pipeline.offline_blur_sigma < 0)
    throw ConfigError("pipeline offline blur settings out of range");
  if (pipeline.timeout_ms < 1) throw ConfigError("pipeline.timeout_ms must be >= 1");
  if (!pipeline.offline) {
    if (pipeline.t2i_url.empty() || pipeline.nvs_url.empty())
      throw ConfigError("online pipeline needs pipeline.t2i_url and pipeline.nvs_url (or B3D_T2I_URL / B3D_NVS_URL)");
    split_url(pipeline.t2i_url);
    split_url(pipeline.nvs_url);
  }

  curation.rule.validate();
  curation.scorer.validate();
  if (!curation.captioner_url.empty()) split_url(curation.captioner_url);
  if (curation.hq_threshold < 0 || curation.hq_threshold > 5) throw ConfigError("curation.hq_threshold must lie in [0, 5]");
  if (curation.caption_bin_width < 1) throw ConfigError("curation.caption_bin_width must be >= 1");
  if (curation.max_concurrent_requests < 1) throw ConfigError("curation.max_concurrent_requests must be >= 1");
  if (curation.calibration_records < 2) throw ConfigError("curation.calibration_records must be >= 2");

  if (eval.embedder != "prompt-render" && eval.embedder != "toy" && eval.embedder != "http")
    throw ConfigError(fmt::format("eval.embedder '{}' is not one of prompt-render, toy, http", eval.embedder));
  if (eval.embedder == "http") {
    if (eval.embedder_url.empty()) throw ConfigError("eval.embedder http needs eval.embedder_url");
    split_url(eval.embedder_url);
  }
  if (eval.embedder_dim < 1) throw ConfigError("eval.embedder_dim must be >= 1");
}

// ---- json -------------------------------------------------------------------

namespace {

// Reads known keys from one object and rejects the rest.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(fmt::format("config {}: expected an object", where()));
  }

  template <class T>
  void get(const char* key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(fmt::format("config {}.{}: {}", where(), key, e.what()));
    }
  }

  void get_path(const char* key, std::filesystem::path& out) {
    std::string s = out.string();
    get(key, s);
    out = s;
  }

  const json* raw(const char* key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }

  std::string child(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError(fmt::format("config {}: unknown key '{}'", where(), k));
  }

 private:
  std::string where() const { return path_.empty() ? "<root>" : path_; }
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::map<DataSource, int> source_ints(const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(fmt::format("config {}: expected an object keyed by data source", path));
  std::map<DataSource, int> out;
  for (const auto& [k, v] : j.items()) {
    if (!v.is_number_integer()) throw ConfigError(fmt::format("config {}.{}: expected an integer", path, k));
    out[parse_source(k)] = v.get<int>();
  }
  return out;
}

std::map<DataSource, double> source_doubles(const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(fmt::format("config {}: expected an object keyed by data source", path));
  std::map<DataSource, double> out;
  for (const auto& [k, v] : j.items()) {
    if (!v.is_number()) throw ConfigError(fmt::format("config {}.{}: expected a number", path, k));
    out[parse_source(k)] = v.get<double>();
  }
  return out;
}

template <class V>
json by_source(const std::map<DataSource, V>& m) {
  json j = json::object();
  for (const auto& [s, v] : m) j[std::string(to_string(s))] = v;
  return j;
}

}  // namespace

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  Section root(j, "");
  root.get("seed", c.seed);
  root.get_path("output_root", c.output_root);
  root.get("jobs", c.jobs);
  if (const json* s = root.raw("schedule")) c.schedule = schedule_from_json(*s);
  if (const json* p = root.raw("policy")) c.policy = policy_from_json(*p);

  if (const json* pj = root.raw("pipeline")) {
    Section s(*pj, "pipeline");
    auto& p = c.pipeline;
    s.get_path("prompt_bank", p.prompt_bank);
    s.get("target_count", p.target_count);
    s.get("batch_size", p.batch_size);
    s.get("view_size", p.view_size);
    std::string src(to_string(p.source));
    s.get("source", src);
    p.source = parse_source(src);
    s.get("offline", p.offline);
    s.get("offline_blur_sigma", p.offline_blur_sigma);
    s.get("offline_blurred_views", p.offline_blurred_views);
    s.get("t2i_url", p.t2i_url);
    s.get("nvs_url", p.nvs_url);
    s.get("timeout_ms", p.timeout_ms);
    s.get("record_timestamps", p.record_timestamps);
    s.finish();
  }

  if (const json* cj = root.raw("curation")) {
    Section s(*cj, "curation");
    auto& cu = c.curation;
    if (const json* r = s.raw("rule")) {
      const auto m = source_ints(*r, "curation.rule");
      for (const auto& [src, v] : m) cu.rule.min_score[src] = v;
    }
    if (const json* sc = s.raw("scorer")) {
      Section ss(*sc, "curation.scorer");
      ss.get("reference_variance", cu.scorer.reference_variance);
      ss.get("blur_weight", cu.scorer.blur_weight);
      ss.get("consistency_weight", cu.scorer.consistency_weight);
      ss.get("consistency_gain", cu.scorer.consistency_gain);
      ss.get("thresholds", cu.scorer.thresholds);
      ss.finish();
    }
    s.get("captioner_url", cu.captioner_url);
    s.get_path("templates", cu.templates);
    s.get("hq_threshold", cu.hq_threshold);
    s.get("caption_bin_width", cu.caption_bin_width);
    s.get("max_concurrent_requests", cu.max_concurrent_requests);
    s.get("calibration_records", cu.calibration_records);
    s.finish();
  }

  if (const json* tj = root.raw("trainer")) {
    Section s(*tj, "trainer");
    auto& t = c.trainer;
    auto& tc = t.config;
    if (const json* mj = s.raw("model")) {
      Section m(*mj, "trainer.model");
      m.get("view_size", tc.model.view_size);
      m.get("hidden", tc.model.hidden);
      m.get("time_dim", tc.model.time_dim);
      m.get("cond_dim", tc.model.cond_dim);
      m.get("init_scale", tc.model.init_scale);
      m.finish();
    }
    if (const json* mix = s.raw("source_mix")) tc.source_mix = source_doubles(*mix, "trainer.source_mix");
    s.get("batch_size", tc.batch_size);
    s.get("learning_rate", tc.learning_rate);
    s.get("momentum", tc.momentum);
    s.get("grad_clip", tc.grad_clip);
    s.get("head_lr_multiplier", tc.head_lr_multiplier);
    s.get("total_steps", tc.total_steps);
    s.get("n_clean_scenes", t.n_clean_scenes);
    s.get("n_synthetic_scenes", t.n_synthetic_scenes);
    s.get("blur_sigma", t.blur_sigma);
    s.get("n_blurred", t.n_blurred);
    s.get("samples_per_condition", t.samples_per_condition);
    s.get("n_reverse_steps", t.n_reverse_steps);
    s.finish();
  }

  if (const json* sj = root.raw("sweep")) {
    Section s(*sj, "sweep");
    auto& w = c.sweep;
    s.get("t_values", w.t_values);
    s.get("seeds", w.seeds);
    s.get("total_steps", w.base.total_steps);
    s.get("learning_rate", w.base.learning_rate);
    s.get("batch_size", w.base.batch_size);
    s.get("clean_fraction", w.clean_fraction);
    s.get("blur_sigma", w.blur_sigma);
    s.get("n_blurred", w.n_blurred);
    s.get("n_clean_scenes", w.n_clean_scenes);
    s.get("n_synthetic_scenes", w.n_synthetic_scenes);
    s.get("samples_per_condition", w.samples_per_condition);
    s.get("reference_per_condition", w.reference_per_condition);
    s.get("n_reverse_steps", w.n_reverse_steps);
    s.finish();
  }

  if (const json* ej = root.raw("eval")) {
    Section s(*ej, "eval");
    s.get("embedder", c.eval.embedder);
    s.get("embedder_url", c.eval.embedder_url);
    s.get("embedder_dim", c.eval.embedder_dim);
    s.get_path("samples", c.eval.samples);
    s.get_path("reference", c.eval.reference);
    s.finish();
  }
  root.finish();
  return c;
}

json run_config_to_json(const RunConfig& c) {
  const auto& p = c.pipeline;
  const auto& cu = c.curation;
  const auto& t = c.trainer;
  const auto& tc = t.config;
  const auto& w = c.sweep;
  return {
      {"seed", c.seed},
      {"output_root", c.output_root.string()},
      {"jobs", c.jobs},
      {"schedule", schedule_to_json(c.schedule)},
      {"policy", policy_to_json(c.policy)},
      {"pipeline",
       {{"prompt_bank", p.prompt_bank.string()},
        {"target_count", p.target_count},
        {"batch_size", p.batch_size},
        {"view_size", p.view_size},
        {"source", std::string(to_string(p.source))},
        {"offline", p.offline},
        {"offline_blur_sigma", p.offline_blur_sigma},
        {"offline_blurred_views", p.offline_blurred_views},
        {"t2i_url", p.t2i_url},
        {"nvs_url", p.nvs_url},
        {"timeout_ms", p.timeout_ms},
        {"record_timestamps", p.record_timestamps}}},
      {"curation",
       {{"rule", by_source(cu.rule.min_score)},
        {"scorer",
         {{"reference_variance", cu.scorer.reference_variance},
          {"blur_weight", cu.scorer.blur_weight},
          {"consistency_weight", cu.scorer.consistency_weight},
          {"consistency_gain", cu.scorer.consistency_gain},
          {"thresholds", cu.scorer.thresholds}}},
        {"captioner_url", cu.captioner_url},
        {"templates", cu.templates.string()},
        {"hq_threshold", cu.hq_threshold},
        {"caption_bin_width", cu.caption_bin_width},
        {"max_concurrent_requests", cu.max_concurrent_requests},
        {"calibration_records", cu.calibration_records}}},
      {"trainer",
       {{"model",
         {{"view_size", tc.model.view_size},
          {"hidden", tc.model.hidden},
          {"time_dim", tc.model.time_dim},
          {"cond_dim", tc.model.cond_dim},
          {"init_scale", tc.model.init_scale}}},
        {"source_mix", by_source(tc.source_mix)},
        {"batch_size", tc.batch_size},
        {"learning_rate", tc.learning_rate},
        {"momentum", tc.momentum},
        {"grad_clip", tc.grad_clip},
        {"head_lr_multiplier", tc.head_lr_multiplier},
        {"total_steps", tc.total_steps},
        {"n_clean_scenes", t.n_clean_scenes},
        {"n_synthetic_scenes", t.n_synthetic_scenes},
        {"blur_sigma", t.blur_sigma},
        {"n_blurred", t.n_blurred},
        {"samples_per_condition", t.samples_per_condition},
        {"n_reverse_steps", t.n_reverse_steps}}},
      {"sweep",
       {{"t_values", w.t_values},
        {"seeds", w.seeds},
        {"total_steps", w.base.total_steps},
        {"learning_rate", w.base.learning_rate},
        {"batch_size", w.base.batch_size},
        {"clean_fraction", w.clean_fraction},
        {"blur_sigma", w.blur_sigma},
        {"n_blurred", w.n_blurred},
        {"n_clean_scenes", w.n_clean_scenes},
        {"n_synthetic_scenes", w.n_synthetic_scenes},
        {"samples_per_condition", w.samples_per_condition},
        {"reference_per_condition", w.reference_per_condition},
        {"n_reverse_steps", w.n_reverse_steps}}},
      {"eval",
       {{"embedder", c.eval.embedder},
        {"embedder_url", c.eval.embedder_url},
        {"embedder_dim", c.eval.embedder_dim},
        {"samples", c.eval.samples.string()},
        {"reference", c.eval.reference.string()}}},
  };
}

RunConfig load_run_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError(fmt::format("config file {} does not exist", path.string()));
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
  return run_config_from_json(j);
}

void apply_environment(RunConfig& c) {
  auto env = [](const char* name) -> std::string {
    const char* v = std::getenv(name);
    return v ? std::string(v) : std::string();
  };
  if (auto v = env("B3D_T2I_URL"); !v.empty()) {
    c.pipeline.t2i_url = v;
    c.pipeline.offline = false;
  }
  if (auto v = env("B3D_NVS_URL"); !v.empty()) {
    c.pipeline.nvs_url = v;
    c.pipeline.offline = false;
  }
  if (auto v = env("B3D_CAPTIONER_URL"); !v.empty()) c.curation.captioner_url = v;
  if (auto v = env("B3D_HTTP_TIMEOUT_MS"); !v.empty()) {
    try {
      std::size_t used = 0;
      const long ms = std::stol(v, &used);
      if (used != v.size() || ms < 1) throw std::invalid_argument(v);
      c.pipeline.timeout_ms = static_cast<int>(ms);
    } catch (const std::exception&) {
      throw ConfigError(fmt::format("B3D_HTTP_TIMEOUT_MS='{}' is not a positive integer", v));
    }
  }
}

}  // namespace b3d
