#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "b3d/pipeline/backend.hpp"
#include "b3d/pipeline/storage.hpp"

namespace b3d {

// One prompt per line. Blank lines are skipped and exact duplicates dropped,
// first occurrence wins. Empty bank or invalid UTF-8 -> ConfigError (the
// latter names the line).
std::vector<std::string> parse_prompt_bank(std::string_view text);
std::vector<std::string> load_prompt_bank(const std::filesystem::path& path);

struct PipelineConfig {
  std::filesystem::path prompt_bank;
  std::filesystem::path output_root;
  // Records to produce; slot i uses prompt i mod bank size. 0 means one per
  // prompt. There is no upper bound: a run can be stopped and resumed.
  std::int64_t target_count = 0;
  int workers = 1;
  int batch_size = 16;  // records per stage batch; the manifest is saved after each
  std::uint64_t seed = 0;
  int view_size = 32;
  DataSource source = DataSource::synthetic_nvs_a;
  bool record_timestamps = true;

  void validate() const;  // ConfigError
};

struct PipelineBackends {
  std::shared_ptr<GeneratorClient> t2i;
  std::shared_ptr<GeneratorClient> nvs;
};

struct PipelineHooks {
  // Polled before every record operation, possibly from worker threads.
  // Returning true stops the run once in-flight work is done; the manifest
  // is checkpointed before returning.
  std::function<bool()> should_stop;
};

struct PipelineResult {
  DatasetManifest manifest;
  bool completed = false;
  std::map<Stage, int> advanced;  // record moves into each stage during this call
  int failed = 0;
};

// Seed for prompt slot `index`, independent of scheduling order.
std::uint64_t record_seed(std::uint64_t global_seed, std::int64_t index);

// pending -> t2i_done -> nvs_done -> assembled, per stage batch. Files go
// under output_root/records/r<index>/. Re-running on the same root resumes:
// finished and failed records are left as they are. Per-record failures mark
// the record failed; StorageError aborts the run.
PipelineResult run_pipeline(const PipelineConfig& config, const PipelineBackends& backends,
                            const PipelineHooks& hooks = {});

}  // namespace b3d
