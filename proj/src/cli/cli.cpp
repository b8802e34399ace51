#include "b3d/cli/cli.hpp"

#include <atomic>
#include <csignal>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "b3d/cli/run_config.hpp"
#include "b3d/core/codec.hpp"
#include "b3d/core/error.hpp"
#include "b3d/core/rng.hpp"
#include "b3d/curation/remote.hpp"
#include "b3d/diffusion/config.hpp"
#include "b3d/eval/eval.hpp"
#include "b3d/pipeline/pipeline.hpp"
#include "b3d/trainer/checkpoint.hpp"
#include "b3d/trainer/sweep.hpp"

namespace b3d {

namespace fs = std::filesystem;

namespace {

std::atomic<bool> g_interrupted{false};

extern "C" void on_sigint(int) { g_interrupted.store(true); }

// Installs the Ctrl-C handler for the lifetime of a command.
class InterruptGuard {
 public:
  InterruptGuard() {
    g_interrupted.store(false);
    previous_ = std::signal(SIGINT, on_sigint);
  }
  ~InterruptGuard() { std::signal(SIGINT, previous_); }
  InterruptGuard(const InterruptGuard&) = delete;
  InterruptGuard& operator=(const InterruptGuard&) = delete;

 private:
  void (*previous_)(int) = SIG_DFL;
};

void use_stderr_logger(bool verbose) {
  auto logger = spdlog::get("b3d");
  if (!logger) logger = spdlog::stderr_color_mt("b3d");
  spdlog::set_default_logger(logger);
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);
}

// Layout under --out.
fs::path dataset_dir(const RunConfig& c) { return c.output_root / "dataset"; }
fs::path curation_dir(const RunConfig& c) { return c.output_root / "curation"; }
fs::path kept_shard_dir(const RunConfig& c) { return c.output_root / "shards" / "kept"; }
fs::path train_dir(const RunConfig& c) { return c.output_root / "train"; }
fs::path sweep_dir(const RunConfig& c) { return c.output_root / "sweep"; }
fs::path eval_dir(const RunConfig& c) { return c.output_root / "eval"; }

void write_out(const fs::path& path, std::string_view text) {
  atomic_write(path, text);
  spdlog::info("wrote {}", path.string());
}

PipelineConfig pipeline_config(const RunConfig& c) {
  PipelineConfig pc;
  pc.prompt_bank = c.pipeline.prompt_bank;
  pc.output_root = dataset_dir(c);
  pc.target_count = c.pipeline.target_count;
  pc.workers = c.effective_jobs();
  pc.batch_size = c.pipeline.batch_size;
  pc.seed = derive_seed(c.seed, hash_string("pipeline"));
  pc.view_size = c.pipeline.view_size;
  pc.source = c.pipeline.source;
  pc.record_timestamps = c.pipeline.record_timestamps;
  return pc;
}

std::string stage_table(const DatasetManifest& m) {
  constexpr Stage kStages[] = {Stage::pending, Stage::t2i_done, Stage::nvs_done, Stage::assembled, Stage::failed};
  std::string out = fmt::format("{:<16}", "source");
  for (Stage s : kStages) out += fmt::format(" {:>10}", to_string(s));
  out += "\n";
  for (const auto& [source, by_stage] : m.counts()) {
    out += fmt::format("{:<16}", to_string(source));
    for (Stage s : kStages) {
      auto it = by_stage.find(s);
      out += fmt::format(" {:>10}", it == by_stage.end() ? 0 : it->second);
    }
    out += "\n";
  }
  return out;
}

// ---- generate -----------------------------------------------------------------

int cmd_generate(const RunConfig& c) {
  if (c.pipeline.prompt_bank.empty()) throw ConfigError("no prompt bank configured (pipeline.prompt_bank or --prompts)");
  const PipelineConfig pc = pipeline_config(c);
  PipelineBackends backends;
  if (c.pipeline.offline) {
    auto offline = std::make_shared<OfflineBackend>(OfflineBackend::Options{
        c.pipeline.view_size, c.pipeline.offline_blur_sigma, c.pipeline.offline_blurred_views});
    backends = {offline, offline};
  } else {
    const std::chrono::milliseconds timeout(c.pipeline.timeout_ms);
    backends = {std::make_shared<HttpGeneratorClient>(c.pipeline.t2i_url, timeout),
                std::make_shared<HttpGeneratorClient>(c.pipeline.nvs_url, timeout)};
  }
  InterruptGuard guard;
  PipelineHooks hooks;
  hooks.should_stop = [] { return g_interrupted.load(); };
  const PipelineResult res = run_pipeline(pc, backends, hooks);

  for (Stage s : {Stage::t2i_done, Stage::nvs_done, Stage::assembled, Stage::failed}) {
    auto it = res.advanced.find(s);
    fmt::print("advanced to {:<10} {}\n", to_string(s), it == res.advanced.end() ? 0 : it->second);
  }
  fmt::print("{}", stage_table(res.manifest));
  fmt::print("manifest: {}\n", (pc.output_root / kManifestFile).string());
  if (!res.completed) {
    fmt::print("run stopped before completion; rerun to resume\n");
    return g_interrupted.load() ? 130 : 0;
  }
  return 0;
}

// ---- curate -------------------------------------------------------------------

struct CurateFlags {
  bool score = false, filter = false, caption = false, stats = false, calibrate = false;
};

// Writes the record fields curation may change back into the manifest.
void update_manifest(DatasetManifest& m, const std::vector<MultiViewRecord>& records) {
  std::map<std::string, const MultiViewRecord*> by_id;
  for (const auto& r : records) by_id[r.record_id] = &r;
  for (auto& e : m.entries) {
    auto it = by_id.find(e.record.record_id);
    if (it == by_id.end() || e.record.stage != Stage::assembled) continue;
    e.record.quality = it->second->quality;
    e.record.caption_short = it->second->caption_short;
    e.record.caption_long = it->second->caption_long;
    e.record.meta = it->second->meta;
  }
}

std::unique_ptr<CaptionerClient> make_captioner(const RunConfig& c) {
  if (c.curation.captioner_url.empty()) return std::make_unique<OfflineCaptioner>(c.curation.scorer);
  return std::make_unique<HttpCaptionerClient>(c.curation.captioner_url, std::chrono::milliseconds(c.pipeline.timeout_ms));
}

PromptTemplates templates_for(const RunConfig& c) {
  return c.curation.templates.empty() ? default_templates() : load_templates(c.curation.templates);
}

// Remote calls, at most max_concurrent_requests at a time.
template <class F>
void for_each_limited(std::vector<MultiViewRecord>& records, int limit, F&& f) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex mu;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < records.size();) {
      if (g_interrupted.load()) return;
      try {
        f(records[i]);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!first_error) first_error = std::current_exception();
        next.store(records.size());
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  const int n = std::max(1, std::min<int>(limit, static_cast<int>(records.size())));
  for (int k = 1; k < n; ++k) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

int cmd_calibrate(const RunConfig& c) {
  const std::uint64_t seed = derive_seed(c.seed, hash_string("calibration"));
  LabeledFixture fx = calibration_fixture(c.curation.calibration_records, c.pipeline.view_size, seed);
  score_records(fx.records, c.curation.scorer, c.effective_jobs());
  const CalibrationReport rep = calibrate(fx.records, fx.hq, c.curation.hq_threshold);
  const std::string text = calibration_text(rep);
  fmt::print("{}", text);
  write_out(curation_dir(c) / "confusion.csv", confusion_csv(rep.matrix));
  write_out(curation_dir(c) / "calibration.txt", text);
  return 0;
}

int cmd_curate(const RunConfig& c, const CurateFlags& f) {
  if (f.calibrate) cmd_calibrate(c);
  if (!f.score && !f.filter && !f.caption && !f.stats) {
    if (!f.calibrate) throw ParameterError("curate needs at least one of --score, --filter, --caption, --stats, --calibrate");
    return 0;
  }
  const fs::path root = dataset_dir(c);
  if (!fs::exists(root / kManifestFile))
    throw PreconditionError(fmt::format("no dataset at {}; run generate first", root.string()));
  DatasetManifest manifest = load_manifest(root);
  std::vector<MultiViewRecord> records = load_assembled(root, manifest);
  if (records.empty()) throw PreconditionError(fmt::format("dataset {} has no assembled records", root.string()));
  InterruptGuard guard;

  if (f.score) {
    if (c.curation.captioner_url.empty()) {
      score_records(records, c.curation.scorer, c.effective_jobs());
    } else {
      auto client = make_captioner(c);
      const PromptTemplates templates = templates_for(c);
      for_each_limited(records, c.curation.max_concurrent_requests,
                       [&](MultiViewRecord& r) { r.quality = remote_quality(*client, r, templates); });
    }
    update_manifest(manifest, records);
    save_manifest(root, manifest);
    int scored = 0;
    for (const auto& r : records) scored += r.quality.has_value();
    fmt::print("scored {} of {} records\n", scored, records.size());
    if (g_interrupted.load()) return 130;
  }

  if (f.caption) {
    auto client = make_captioner(c);
    const PromptTemplates templates = templates_for(c);
    for_each_limited(records, c.curation.max_concurrent_requests, [&](MultiViewRecord& r) {
      r = caption_record(*client, r, CaptionMode::short_form, templates);
      r = caption_record(*client, r, CaptionMode::long_form, templates);
    });
    update_manifest(manifest, records);
    save_manifest(root, manifest);
    fmt::print("captioned {} records with {}\n", records.size(), client->id());
    if (g_interrupted.load()) return 130;
  }

  if (f.filter) {
    const FilterResult res = filter_records(records, c.curation.rule);
    std::map<DataSource, std::pair<int, int>> tally;
    for (const auto& r : res.kept) ++tally[r.source].first;
    for (const auto& r : res.rejected) ++tally[r.source].second;
    std::string csv = "source,min_score,kept,rejected\n";
    fmt::print("{:<16} {:>9} {:>6} {:>9}\n", "source", "min_score", "kept", "rejected");
    for (const auto& [source, kr] : tally) {
      const int min_score = c.curation.rule.min_score.at(source);
      fmt::print("{:<16} {:>9} {:>6} {:>9}\n", to_string(source), min_score, kr.first, kr.second);
      csv += fmt::format("{},{},{},{}\n", to_string(source), min_score, kr.first, kr.second);
    }
    fmt::print("kept {} rejected {}\n", res.kept.size(), res.rejected.size());
    write_out(curation_dir(c) / "filter.csv", csv);
    const fs::path shard = kept_shard_dir(c);
    fs::remove_all(shard);
    if (!res.kept.empty()) {
      write_shard(res.kept, shard);
      fmt::print("kept shard: {}\n", shard.string());
    }
  }

  if (f.stats) {
    write_out(curation_dir(c) / "score_histogram.csv", score_histogram_csv(score_histogram(records)));
    write_out(curation_dir(c) / "caption_lengths.csv",
              caption_length_csv(caption_length_histogram(records, c.curation.caption_bin_width)));
  }
  return 0;
}

// ---- train / sweep ------------------------------------------------------------

std::vector<MultiViewRecord> load_records(const fs::path& path) {
  if (fs::exists(path / kManifestFile)) return load_assembled(path, load_manifest(path));
  if (fs::exists(path / kShardIndexFile)) return read_shard(path);
  throw PreconditionError(fmt::format("{} is neither a dataset root nor a shard", path.string()));
}

int cmd_train(const RunConfig& c, const fs::path& data_path) {
  const TrainConfig tc = c.train_config();
  TrainingSet data;
  if (data_path.empty()) {
    SweepConfig sc;
    sc.base = tc;
    sc.n_clean_scenes = c.trainer.n_clean_scenes;
    sc.n_synthetic_scenes = c.trainer.n_synthetic_scenes;
    sc.blur_sigma = c.trainer.blur_sigma;
    sc.n_blurred = c.trainer.n_blurred;
    data = make_ablation_data(sc, derive_seed(c.seed, hash_string("train-data")));
  } else {
    const auto records = load_records(data_path);
    for (const auto& r : records)
      if (r.views[0].width != tc.model.view_size)
        throw ShapeError(fmt::format("record {} has {} px views, the model expects {}", r.record_id, r.views[0].width,
                                     tc.model.view_size));
    data = partition_by_source(records);
  }
  for (const auto& [source, w] : tc.source_mix)
    if (w > 0 && (!data.count(source) || data.at(source).empty()))
      throw PreconditionError(fmt::format("training mix uses {} but the data has none", to_string(source)));

  const int every = std::max(1, tc.total_steps / 10);
  const TrainResult res = train(tc, data, [&](int step, double loss) {
    if ((step + 1) % every == 0) spdlog::info("step {}/{} loss {:.5f}", step + 1, tc.total_steps, loss);
  });

  const fs::path dir = train_dir(c);
  fs::create_directories(dir);
  save_checkpoint(dir / "checkpoint.b3dckpt", res.checkpoint);
  std::string loss = "step,source,loss\n";
  for (const auto& p : res.loss) loss += fmt::format("{},all,{:.9g}\n", p.step, p.loss);
  for (const auto& [source, pts] : res.loss_by_source)
    for (const auto& p : pts) loss += fmt::format("{},{},{:.9g}\n", p.step, to_string(source), p.loss);
  write_out(dir / "loss.csv", loss);
  std::string ts = "step,source,t\n";
  for (const auto& d : res.timestep_log) ts += fmt::format("{},{},{}\n", d.step, to_string(d.source), d.t);
  write_out(dir / "timesteps.csv", ts);

  // Any draw outside its source's range is a bug; report it loudly.
  int violations = 0;
  for (const auto& d : res.timestep_log) {
    violations += !tc.policy.allows(d.source, d.t);
  }
  fmt::print("trained {} steps, final loss {:.5f}, timestep violations {}\n", tc.total_steps,
             res.loss.empty() ? 0.0 : res.loss.back().loss, violations);

  if (c.trainer.samples_per_condition > 0) {
    const int n_cond = tc.model.n_conditions;
    std::vector<int> conds;
    for (int k = 0; k < n_cond; ++k)
      for (int j = 0; j < c.trainer.samples_per_condition; ++j) conds.push_back(k);
    Rng rng = make_rng(derive_seed(c.seed, hash_string("train-samples")));
    const Eigen::MatrixXd x = generate(res.checkpoint, conds, c.trainer.n_reverse_steps, rng);
    std::vector<MultiViewRecord> samples;
    std::set<std::string> ids;
    for (Eigen::Index i = 0; i < x.cols(); ++i) {
      MultiViewRecord r;
      r.source = DataSource::rendered_asset;
      r.views = split_grid(tensor_to_grid(x.col(i), tc.model.view_size));
      const ToyScene proto = condition_prototype(conds[static_cast<std::size_t>(i)]);
      r.prompt = scene_prompt(proto);
      r.meta["scene"] = to_json(proto);
      r.meta["sample"] = i;
      r.stage = Stage::assembled;
      r.provenance.generator = "b3d-denoiser";
      r.provenance.seed = c.seed;
      seal(r);
      if (ids.insert(r.record_id).second) samples.push_back(std::move(r));
    }
    fs::remove_all(dir / "samples");
    write_shard(samples, dir / "samples");
    fmt::print("samples: {} ({} grids)\n", (dir / "samples").string(), samples.size());
  }
  return violations == 0 ? 0 : 1;
}

int cmd_sweep(const RunConfig& c) {
  SweepConfig sc = c.sweep_config();
  // Every seed in the list goes through the global one.
  for (auto& s : sc.seeds) s = derive_seed(c.seed, {hash_string("sweep"), s});
  const SweepReport rep = ablation_sweep(sc, [](const SweepRow& r) {
    spdlog::info("T={} seed={:x}: sharpness {:.4f}, accuracy {:.1f}%{}", r.T, r.seed, r.sharpness, r.cond_accuracy,
                 r.synthetic_excluded ? " (synthetic excluded)" : "");
  });
  write_out(sweep_dir(c) / "sweep.csv", sweep_table_csv(rep));
  const std::string summary = sweep_summary_csv(rep);
  write_out(sweep_dir(c) / "summary.csv", summary);
  fmt::print("{}", summary);
  return 0;
}

// ---- eval ---------------------------------------------------------------------

std::vector<EvalSample> load_eval_samples(const fs::path& path) {
  std::vector<EvalSample> out;
  if (fs::exists(path / kManifestFile) || fs::exists(path / kShardIndexFile)) {
    for (const auto& r : load_records(path))
      out.push_back({r.grid.empty() ? assemble_grid(r.views) : r.grid, r.prompt, r.source, r.quality});
    return out;
  }
  if (!fs::is_directory(path))
    throw PreconditionError(fmt::format("{} is not a dataset root, a shard or a directory of PNGs", path.string()));
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(path))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  // Bare images carry no prompt; the file stem stands in for one.
  for (const auto& f : files) {
    std::string prompt = f.stem().string();
    std::replace(prompt.begin(), prompt.end(), '_', ' ');
    out.push_back({decode_png(read_file(f)), prompt, DataSource::rendered_asset, std::nullopt});
  }
  if (out.empty()) throw PreconditionError(fmt::format("{} holds no PNG images", path.string()));
  return out;
}

std::unique_ptr<Embedder> make_embedder(const RunConfig& c) {
  if (c.eval.embedder == "toy") return std::make_unique<ToyEmbedder>();
  if (c.eval.embedder == "http")
    return std::make_unique<HttpEmbedder>(c.eval.embedder_url, c.eval.embedder_dim,
                                          std::chrono::milliseconds(c.pipeline.timeout_ms));
  return std::make_unique<PromptRenderEmbedder>();
}

int cmd_eval(const RunConfig& c) {
  if (c.eval.samples.empty() || c.eval.reference.empty())
    throw ConfigError("eval needs --samples and --reference (or eval.samples / eval.reference)");
  const auto samples = load_eval_samples(c.eval.samples);
  std::vector<Image> reference;
  for (auto& s : load_eval_samples(c.eval.reference)) reference.push_back(std::move(s.image));
  const auto embedder = make_embedder(c);
  const EvalReport rep = eval_report(*embedder, samples, reference, c.effective_jobs());
  write_out(eval_dir(c) / "report.json", to_json(rep).dump(2) + "\n");
  const std::string table = render_report_table(rep);
  write_out(eval_dir(c) / "report.txt", table);
  write_out(eval_dir(c) / "benchmark.csv", benchmark_csv(benchmark_from_report(rep, "this run")));
  fmt::print("{}", table);
  return 0;
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = std::min(text.find(',', pos), text.size());
    const std::string item = text.substr(pos, comma - pos);
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError(fmt::format("'{}' is not a comma-separated list of integers", text));
    }
    pos = comma + 1;
  }
  return out;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Synthetic multi-view data pipeline, curation, toy diffusion training and evaluation.", "b3d"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  bool offline = false, verbose = false, print_config = false;
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--seed", seed, "global seed; every other seed is derived from it");
  app.add_option("--jobs", jobs, "worker budget (default: logical cores)");
  app.add_flag("--offline", offline, "use the procedural generator and captioner, no network");
  app.add_option("--out", out_dir, "output root");
  app.add_flag("-v,--verbose", verbose, "debug logging");
  app.add_flag("--print-config", print_config, "print the effective configuration and exit");

  auto* gen = app.add_subcommand("generate", "run or resume the generation pipeline");
  std::string prompts;
  std::optional<std::int64_t> count;
  gen->add_option("--prompts", prompts, "prompt bank, one prompt per line");
  gen->add_option("--count", count, "records to produce (0: one per prompt)");

  auto* cur = app.add_subcommand("curate", "score, caption, filter and summarise the dataset");
  CurateFlags cf;
  cur->add_flag("--score", cf.score, "assign quality labels");
  cur->add_flag("--filter", cf.filter, "apply the filter rule and write the kept shard");
  cur->add_flag("--caption", cf.caption, "write short and long captions");
  cur->add_flag("--stats", cf.stats, "write score and caption-length histograms");
  cur->add_flag("--calibrate", cf.calibrate, "measure the scorer on a labelled fixture");

  auto* tr = app.add_subcommand("train", "train the toy denoiser");
  std::string data_path;
  std::optional<int> steps;
  tr->add_option("--data", data_path, "dataset root or shard (default: procedural clean + blurred scenes)");
  tr->add_option("--steps", steps, "override the number of training steps");

  auto* sw = app.add_subcommand("sweep", "synthetic-data timestep threshold sweep");
  std::string t_list;
  std::optional<int> sweep_steps;
  sw->add_option("--T", t_list, "comma-separated thresholds, e.g. 0,200,600");
  sw->add_option("--steps", sweep_steps, "override training steps per run");

  auto* ev = app.add_subcommand("eval", "CLIP-style scores and Frechet distance of a sample set");
  std::string samples, reference, embedder;
  ev->add_option("--samples", samples, "dataset root, shard or directory of PNG grids");
  ev->add_option("--reference", reference, "reference images, same forms as --samples");
  ev->add_option("--embedder", embedder, "prompt-render, toy or http");


  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, std::cout, std::cerr);
    return rc == 0 ? 0 : 2;
  }
  use_stderr_logger(verbose);

  try {
    RunConfig c = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    apply_environment(c);
    if (seed) c.seed = *seed;
    if (jobs) c.jobs = *jobs;
    if (!out_dir.empty()) c.output_root = out_dir;
    if (offline) {
      c.pipeline.offline = true;
      c.curation.captioner_url.clear();
      if (c.eval.embedder == "http") c.eval.embedder = "prompt-render";
    }
    if (!prompts.empty()) c.pipeline.prompt_bank = prompts;
    if (count) c.pipeline.target_count = *count;
    if (steps) c.trainer.config.total_steps = *steps;
    if (!t_list.empty()) c.sweep.t_values = parse_int_list(t_list);
    if (sweep_steps) c.sweep.base.total_steps = *sweep_steps;
    if (!samples.empty()) c.eval.samples = samples;
    if (!reference.empty()) c.eval.reference = reference;
    if (!embedder.empty()) c.eval.embedder = embedder;
    c.validate();
    if (print_config) {
      fmt::print("{}\n", run_config_to_json(c).dump(2));
      return 0;
    }

    if (*gen) return cmd_generate(c);
    if (*cur) return cmd_curate(c, cf);
    if (*tr) return cmd_train(c, data_path);
    if (*sw) return cmd_sweep(c);
    if (*ev) return cmd_eval(c);
    return 2;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    spdlog::error("unexpected: {}", e.what());
    return 1;
  }
}

}  // namespace b3d
