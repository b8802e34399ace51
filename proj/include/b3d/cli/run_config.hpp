#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "b3d/curation/curation.hpp"
#include "b3d/diffusion/policy.hpp"
#include "b3d/diffusion/schedule.hpp"
#include "b3d/trainer/sweep.hpp"
#include "b3d/trainer/train.hpp"

namespace b3d {

struct PipelineSettings {
  std::filesystem::path prompt_bank;
  std::int64_t target_count = 0;
  int batch_size = 16;
  int view_size = 16;
  DataSource source = DataSource::synthetic_nvs_a;
  bool offline = true;
  double offline_blur_sigma = 0.0;
  int offline_blurred_views = 0;
  std::string t2i_url;
  std::string nvs_url;
  int timeout_ms = 30000;
  bool record_timestamps = true;
};

struct CurationSettings {
  FilterRule rule = default_filter_rule();
  ScorerConfig scorer;
  std::string captioner_url;  // empty: heuristic scores, offline captions
  std::filesystem::path templates;  // optional JSON of prompt templates
  int hq_threshold = 4;
  int caption_bin_width = 10;
  int max_concurrent_requests = 4;
  int calibration_records = 200;
};

struct TrainSettings {
  TrainConfig config;  // schedule and policy are filled from the top level
  int n_clean_scenes = 96;
  int n_synthetic_scenes = 192;
  double blur_sigma = 1.5;
  int n_blurred = 3;
  int samples_per_condition = 0;  // generated grids written after training
  int n_reverse_steps = 100;
};

struct EvalSettings {
  std::string embedder = "prompt-render";  // prompt-render | toy | http
  std::string embedder_url;
  int embedder_dim = 192;
  std::filesystem::path samples;    // dataset root, shard or PNG directory
  std::filesystem::path reference;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_root = "b3d-out";
  int jobs = 0;  // 0: one per logical core
  ScheduleSpec schedule = sweep_base_config().schedule;
  TimestepPolicy policy = default_policy();
  PipelineSettings pipeline;
  CurationSettings curation;
  TrainSettings trainer;
  SweepConfig sweep;
  EvalSettings eval;

  RunConfig();
  // Schedule, policy against the schedule, trainer mix and coverage, sweep
  // ranges, scorer and filter rule, and every endpoint URL in use. Throws
  // ConfigError listing the first problem found.
  void validate() const;
  int effective_jobs() const;
  TrainConfig train_config() const;  // trainer config with schedule, policy and seed applied
  SweepConfig sweep_config() const;
};

// Missing keys keep their defaults; unknown keys are a ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);

// B3D_T2I_URL, B3D_NVS_URL, B3D_CAPTIONER_URL and B3D_HTTP_TIMEOUT_MS. A set
// generator URL turns the offline backends off.
void apply_environment(RunConfig& c);

}  // namespace b3d
