#include "b3d/pipeline/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <unordered_set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>
#include <tbb/blocked_range.h>
#include <tbb/parallel_for.h>
#include <tbb/task_arena.h>

#include "b3d/core/codec.hpp"
#include "b3d/core/error.hpp"
#include "b3d/core/rng.hpp"

namespace b3d {

namespace fs = std::filesystem;

namespace {

// Length of the UTF-8 sequence starting at s[i], 0 if invalid.
std::size_t utf8_sequence(std::string_view s, std::size_t i) {
  const auto c = static_cast<unsigned char>(s[i]);
  if (c < 0x80) return 1;
  std::size_t n;
  std::uint32_t cp;
  if ((c & 0xE0) == 0xC0) {
    n = 2;
    cp = c & 0x1F;
  } else if ((c & 0xF0) == 0xE0) {
    n = 3;
    cp = c & 0x0F;
  } else if ((c & 0xF8) == 0xF0) {
    n = 4;
    cp = c & 0x07;
  } else {
    return 0;
  }
  if (i + n > s.size()) return 0;
  for (std::size_t k = 1; k < n; ++k) {
    const auto d = static_cast<unsigned char>(s[i + k]);
    if ((d & 0xC0) != 0x80) return 0;
    cp = (cp << 6) | (d & 0x3F);
  }
  static constexpr std::uint32_t kMin[] = {0, 0, 0x80, 0x800, 0x10000};
  if (cp < kMin[n] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return 0;
  return n;
}

bool valid_utf8(std::string_view s) {
  for (std::size_t i = 0; i < s.size();) {
    const std::size_t n = utf8_sequence(s, i);
    if (n == 0) return false;
    i += n;
  }
  return true;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

std::vector<std::string> parse_prompt_bank(std::string_view text) {
  std::vector<std::string> prompts;
  std::unordered_set<std::string> seen;
  std::size_t pos = 0;
  int line_no = 0;
  if (text.substr(0, 3) == "\xEF\xBB\xBF") pos = 3;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!valid_utf8(line)) throw ConfigError(fmt::format("prompt bank line {}: invalid UTF-8", line_no));
    std::string p = trim(line);
    if (p.empty()) continue;
    if (seen.insert(p).second) prompts.push_back(std::move(p));
  }
  if (prompts.empty()) throw ConfigError("prompt bank holds no prompts");
  return prompts;
}

std::vector<std::string> load_prompt_bank(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw ConfigError(fmt::format("prompt bank {} does not exist", path.string()));
  try {
    return parse_prompt_bank(read_text(path));
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

void PipelineConfig::validate() const {
  if (prompt_bank.empty()) throw ConfigError("pipeline.prompt_bank is not set");
  if (output_root.empty()) throw ConfigError("pipeline.output_root is not set");
  if (target_count < 0) throw ConfigError(fmt::format("pipeline.target_count must be >= 0 (got {})", target_count));
  if (workers < 1) throw ConfigError(fmt::format("pipeline.workers must be >= 1 (got {})", workers));
  if (batch_size < 1) throw ConfigError(fmt::format("pipeline.batch_size must be >= 1 (got {})", batch_size));
  if (view_size < 8) throw ConfigError(fmt::format("pipeline.view_size must be >= 8 (got {})", view_size));
}

std::uint64_t record_seed(std::uint64_t global_seed, std::int64_t index) {
  return derive_seed(global_seed, {hash_string("record"), static_cast<std::uint64_t>(index)});
}

namespace {

std::string record_dir(std::int64_t index) { return fmt::format("records/r{:07d}", index); }

struct Stopper {
  const PipelineHooks& hooks;
  std::atomic<bool> stopped{false};
  bool operator()() {
    if (stopped.load()) return true;
    if (hooks.should_stop && hooks.should_stop()) stopped = true;
    return stopped.load();
  }
};

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& config, const PipelineBackends& backends, const PipelineHooks& hooks) {
  config.validate();
  if (!backends.t2i || !backends.nvs) throw ConfigError("pipeline backends are not configured");
  const std::vector<std::string> prompts = load_prompt_bank(config.prompt_bank);
  const std::int64_t target = config.target_count > 0 ? config.target_count : static_cast<std::int64_t>(prompts.size());
  const fs::path& root = config.output_root;

  const nlohmann::json run = {{"prompt_bank_sha256", sha256_hex(read_text(config.prompt_bank))},
                              {"seed", config.seed},
                              {"view_size", config.view_size},
                              {"source", std::string(to_string(config.source))},
                              {"t2i", backends.t2i->id()},
                              {"nvs", backends.nvs->id()}};

  PipelineResult res;
  DatasetManifest& m = res.manifest;
  if (fs::exists(root / kManifestFile)) {
    m = load_manifest(root);
    if (m.run != run)
      throw ConfigError(fmt::format("{} holds a manifest from a different run configuration", root.string()));
  } else {
    fs::create_directories(root);
    m.run = run;
  }

  // Slots not yet in the manifest start out pending.
  std::vector<std::size_t> todo;
  {
    std::unordered_set<int> present;
    for (const auto& e : m.entries) present.insert(e.index);
    for (std::int64_t i = 0; i < target; ++i) {
      if (present.count(static_cast<int>(i))) continue;
      ManifestEntry e;
      e.index = static_cast<int>(i);
      e.record.source = config.source;
      e.record.prompt = prompts[static_cast<std::size_t>(i % static_cast<std::int64_t>(prompts.size()))];
      e.record.provenance.seed = record_seed(config.seed, i);
      e.record.provenance.generator = backends.t2i->id() + " -> " + backends.nvs->id();
      m.entries.push_back(std::move(e));
    }
    std::sort(m.entries.begin(), m.entries.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
    for (std::size_t k = 0; k < m.entries.size(); ++k) {
      const Stage s = m.entries[k].record.stage;
      if (m.entries[k].index < target && s != Stage::assembled && s != Stage::failed) todo.push_back(k);
    }
  }
  save_manifest(root, m);

  const bool offline_nvs = dynamic_cast<const OfflineBackend*>(backends.nvs.get()) != nullptr;
  Stopper stop{hooks};
  tbb::task_arena arena(config.workers);

  auto stamp = [&](MultiViewRecord& r, std::string_view stage) {
    if (config.record_timestamps) r.provenance.timestamps[std::string(stage)] = utc_timestamp();
  };

  // One stage step for one record; returns true when it advanced.
  auto step = [&](ManifestEntry& e) -> bool {
    MultiViewRecord& r = e.record;
    const std::string dir = record_dir(e.index);
    const Stage from = r.stage;
    const char* what = "?";
    try {
      switch (from) {
        case Stage::pending: {
          what = "t2i";
          const Image img = t2i_generate(*backends.t2i, r.prompt, r.provenance.seed, config.view_size);
          const std::string rel = dir + "/t2i.png";
          atomic_write(root / rel, encode_png(img));
          e.paths["t2i"] = rel;
          r.stage = Stage::t2i_done;
          stamp(r, "t2i");
          break;
        }
        case Stage::t2i_done: {
          what = "nvs";
          const Image cond = decode_png(read_file(root / e.paths.at("t2i")));
          const Views views = nvs_generate(*backends.nvs, cond, r.prompt, r.provenance.seed, config.view_size);
          for (int v = 0; v < kViewsPerRecord; ++v) {
            const std::string rel = fmt::format("{}/view{}.png", dir, v);
            atomic_write(root / rel, encode_png(views[static_cast<std::size_t>(v)]));
            e.paths[fmt::format("view{}", v)] = rel;
          }
          r.stage = Stage::nvs_done;
          stamp(r, "nvs");
          break;
        }
        case Stage::nvs_done: {
          what = "assemble";
          MultiViewRecord full = load_record(root, e);
          const std::string rel = dir + "/grid.png";
          atomic_write(root / rel, encode_png(full.grid));
          e.paths["grid"] = rel;
          r.record_id = full.record_id;
          if (offline_nvs) r.meta["scene"] = to_json(scene_for_prompt(r.prompt, r.provenance.seed));
          r.stage = Stage::assembled;
          stamp(r, "assembled");
          break;
        }
        default:
          return false;
      }
    } catch (const StorageError&) {
      throw;
    } catch (const Error& err) {
      r.stage = Stage::failed;
      r.error = fmt::format("{}: {}", what, err.what());
      spdlog::warn("record {} failed at {}: {}", e.index, what, err.what());
    }
    return true;
  };

  const std::size_t B = static_cast<std::size_t>(config.batch_size);
  for (std::size_t start = 0; start < todo.size() && !stop(); start += B) {
    const std::size_t end = std::min(todo.size(), start + B);
    for (Stage target_stage : {Stage::t2i_done, Stage::nvs_done, Stage::assembled}) {
      std::atomic<int> moved{0}, failed{0};
      arena.execute([&] {
        tbb::parallel_for(tbb::blocked_range<std::size_t>(start, end), [&](const auto& range) {
          for (std::size_t k = range.begin(); k != range.end(); ++k) {
            ManifestEntry& e = m.entries[todo[k]];
            // Only records one stage behind move in this pass.
            if (e.record.stage == Stage::failed || e.record.stage == Stage::assembled) continue;
            if (static_cast<int>(e.record.stage) + 1 != static_cast<int>(target_stage)) continue;
            if (stop()) return;
            if (step(e)) (e.record.stage == Stage::failed ? failed : moved)++;
          }
        });
      });
      res.advanced[target_stage] += moved.load();
      res.failed += failed.load();
      save_manifest(root, m);
      if (stop.stopped.load()) break;
    }
  }

  res.completed = !stop.stopped.load();
  if (res.completed)
    for (std::size_t k : todo) {
      const Stage s = m.entries[k].record.stage;
      if (s != Stage::assembled && s != Stage::failed) res.completed = false;
    }
  return res;
}

}  // namespace b3d
