#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>

#include "doctest.h"

#include "b3d/core/codec.hpp"
#include "b3d/core/error.hpp"
#include "b3d/pipeline/pipeline.hpp"
#include "b3d/trainer/scene.hpp"

using namespace b3d;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(std::string_view tag) {
    path = fs::temp_directory_path() / fmt::format("b3d-{}-{:x}", tag, std::random_device{}());
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_file(const fs::path& p, std::string_view text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

fs::path toy_bank(const fs::path& dir, int n) {
  std::string text;
  for (int i = 0; i < n; ++i) {
    const ToyScene s = condition_prototype(i % kConditionCount);
    text += fmt::format("{} number {}\n", scene_prompt(s), i);
  }
  write_file(dir / "prompts.txt", text);
  return dir / "prompts.txt";
}

PipelineBackends offline(int view = 16) {
  auto b = std::make_shared<OfflineBackend>(OfflineBackend::Options{view, 1.5, 2});
  return {b, b};
}

PipelineConfig config_for(const fs::path& bank, const fs::path& out, int view = 16) {
  PipelineConfig c;
  c.prompt_bank = bank;
  c.output_root = out;
  c.view_size = view;
  c.batch_size = 4;
  c.seed = 11;
  return c;
}

// Every file under root, keyed by relative path.
std::map<std::string, Bytes> tree(const fs::path& root) {
  std::map<std::string, Bytes> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().filename() != kManifestFile)
      out[fs::relative(e.path(), root).string()] = read_file(e.path());
  return out;
}

class ScriptedClient : public GeneratorClient {
 public:
  std::function<GeneratorResponse(const GeneratorRequest&)> fn;
  std::string id() const override { return "scripted"; }
  GeneratorResponse call(const GeneratorRequest& r) override { return fn(r); }
};

Image random_image(int w, int h, Rng& rng) {
  Image img(w, h);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(uniform_int(rng, 0, 255));
  return img;
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("prompt bank parsing") {
    CHECK(parse_prompt_bank("a red cube\nblue ball\na red cube\n").size() == 2);
    const auto p = parse_prompt_bank("\n  x  \n\ny\n\n");
    REQUIRE(p.size() == 2);
    CHECK(p[0] == "x");
    std::string bank;
    for (int i = 0; i < 110; ++i) bank += fmt::format("prompt {}\n", i);
    CHECK(parse_prompt_bank(bank).size() == 110);
    CHECK_THROWS_AS(parse_prompt_bank("\n \n"), ConfigError);
    try {
      parse_prompt_bank("ok\nbad \xC3\x28 byte\n");
      FAIL("no error");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    CHECK(parse_prompt_bank("caf\xC3\xA9\n").at(0) == "caf\xC3\xA9");
    try {
      load_prompt_bank("/nonexistent/bank.txt");
      FAIL("no error");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("/nonexistent/bank.txt") != std::string::npos);
    }
  }

  TEST_CASE("grid tiling") {
    Views v;
    const Rgb8 colours[4] = {{255, 0, 0}, {0, 255, 0}, {0, 0, 255}, {9, 9, 9}};
    for (int k = 0; k < 4; ++k) v[static_cast<std::size_t>(k)] = Image(16, 16, colours[k]);
    const Image g = assemble_grid(v);
    CHECK(g.width == 32);
    CHECK(g.rgb(3, 3) == colours[0]);
    CHECK(g.rgb(20, 3) == colours[1]);
    CHECK(g.rgb(3, 20) == colours[2]);
    CHECK(g.rgb(31, 31) == colours[3]);
    Rng rng = make_rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      const int n = static_cast<int>(uniform_int(rng, 1, 24));
      Views r;
      for (auto& im : r) im = random_image(n, n, rng);
      CHECK(split_grid(assemble_grid(r)) == r);
    }
    CHECK_THROWS_AS(split_grid(Image(31, 31)), ShapeError);
    CHECK_THROWS_AS(split_grid(Image(32, 30)), ShapeError);
    v[2] = Image(8, 8);
    CHECK_THROWS_AS(assemble_grid(v), ShapeError);
  }

  TEST_CASE("offline backend geometry and determinism") {
    OfflineBackend b({16, 0.0, 0});
    const Image a1 = t2i_generate(b, "an azure cube", 5, 16);
    CHECK(a1 == t2i_generate(b, "an azure cube", 5, 16));
    const ToyScene s = scene_for_prompt("an azure cube", 5);
    CHECK(s.shape == ShapeClass::cube);
    CHECK(hue_bin(s.hue) == 3);
    CHECK(scene_for_prompt("a wooden chair", 1).condition() == scene_for_prompt("a wooden chair", 2).condition());

    const Views sphere = nvs_generate(b, t2i_generate(b, "a rose sphere", 1, 16), "a rose sphere", 1, 16);
    for (int k = 1; k < 4; ++k) CHECK(sphere[static_cast<std::size_t>(k)] == sphere[0]);
    const Views cube = nvs_generate(b, a1, "an azure cube", 5, 16);
    CHECK(cube[2] == mirror_horizontal(cube[0]));
  }

  TEST_CASE("response contract") {
    ScriptedClient c;
    OfflineBackend real({16, 0.0, 0});
    c.fn = [](const GeneratorRequest&) { return GeneratorResponse{{}, "x", 0}; };
    CHECK_THROWS_AS(t2i_generate(c, "p", 1, 16), ProtocolError);
    c.fn = [&](const GeneratorRequest& r) {
      auto res = real.call(r);
      res.images.pop_back();
      return res;
    };
    try {
      nvs_generate(c, Image(16, 16), "a lime cone", 1, 16);
      FAIL("no error");
    } catch (const ProtocolError& e) {
      const std::string w = e.what();
      CHECK(w.find("expected 4") != std::string::npos);
      CHECK(w.find("got 3") != std::string::npos);
    }
    c.fn = [](const GeneratorRequest&) { return GeneratorResponse{{Bytes{1, 2, 3}}, "x", 0}; };
    CHECK_THROWS_AS(t2i_generate(c, "p", 1, 16), ProtocolError);

    // Oversized payload: a block-upscaled view comes back as the original.
    Rng rng = make_rng(8);
    const Image small = random_image(16, 16, rng);
    Image big(32, 32);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) big.set(x, y, small.rgb(x / 2, y / 2));
    c.fn = [&](const GeneratorRequest&) { return GeneratorResponse{{encode_png(big)}, "x", 0}; };
    CHECK(t2i_generate(c, "p", 1, 16) == small);
  }

  TEST_CASE("request documents round-trip") {
    GeneratorRequest r{RequestKind::nvs, "a violet torus", {1, 2, 3, 250}, 42, 4};
    const auto back = request_from_json(to_json(r));
    CHECK(back.kind == r.kind);
    CHECK(back.prompt == r.prompt);
    CHECK(back.image == r.image);
    CHECK(back.seed == r.seed);
    CHECK(back.n_views == 4);
    CHECK_THROWS_AS(request_from_json(nlohmann::json{{"kind", "t2i"}}), ProtocolError);
    CHECK_THROWS_AS(split_url("ftp://x"), ConfigError);
    CHECK(split_url("http://h:1/a/b/").second == "/a/b");
  }

  TEST_CASE("http client retries transient failures") {
    httplib::Server srv;
    std::atomic<int> hits{0}, fail_first{2};
    OfflineBackend real({16, 0.0, 0});
    srv.Post("/gen/t2i", [&](const httplib::Request& req, httplib::Response& res) {
      ++hits;
      if (fail_first-- > 0) {
        res.status = 503;
        return;
      }
      res.set_content(to_json(real.call(request_from_json(nlohmann::json::parse(req.body)))).dump(), "application/json");
    });
    srv.Post("/gen/nvs", [&](const httplib::Request&, httplib::Response& res) {
      ++hits;
      res.status = 404;
    });
    srv.Post("/bad/t2i", [&](const httplib::Request&, httplib::Response& res) { res.set_content("not json", "text/plain"); });
    const int port = srv.bind_to_any_port("127.0.0.1");
    std::thread th([&] { srv.listen_after_bind(); });
    srv.wait_until_ready();

    const RetryPolicy fast{3, std::chrono::milliseconds(1), 2.0};
    HttpGeneratorClient client(fmt::format("http://127.0.0.1:{}/gen", port), std::chrono::milliseconds(5000), fast);
    CHECK(t2i_generate(client, "a green cone", 3, 16) == t2i_generate(real, "a green cone", 3, 16));
    CHECK(hits.load() == 3);

    hits = 0;
    fail_first = 10;
    CHECK_THROWS_AS(t2i_generate(client, "a green cone", 3, 16), RemoteError);
    CHECK(hits.load() == 3);

    hits = 0;
    CHECK_THROWS_AS(nvs_generate(client, Image(16, 16), "x", 1, 16), RemoteError);
    CHECK(hits.load() == 1);  // 404 is not retried

    HttpGeneratorClient bad(fmt::format("http://127.0.0.1:{}/bad", port), std::chrono::milliseconds(5000), fast);
    CHECK_THROWS_AS(t2i_generate(bad, "x", 1, 16), ProtocolError);

    srv.stop();
    th.join();
    HttpGeneratorClient gone(fmt::format("http://127.0.0.1:{}/gen", port), std::chrono::milliseconds(200), fast);
    CHECK_THROWS_AS(t2i_generate(gone, "x", 1, 16), RemoteError);
  }

  TEST_CASE("offline run of 10 prompts") {
    TempDir tmp("run10");
    const auto bank = toy_bank(tmp.path, 10);
    const auto cfg = config_for(bank, tmp.path / "out");
    const auto res = run_pipeline(cfg, offline());
    CHECK(res.completed);
    CHECK(res.manifest.entries.size() == 10);
    CHECK(res.manifest.counts().at(DataSource::synthetic_nvs_a).at(Stage::assembled) == 10);
    CHECK(res.advanced.at(Stage::assembled) == 10);
    const auto loaded = load_manifest(cfg.output_root);
    CHECK(loaded == res.manifest);
    const auto records = load_assembled(cfg.output_root, loaded);
    REQUIRE(records.size() == 10);
    for (const auto& r : records) {
      CHECK(r.record_id == compute_record_id(r.views));
      CHECK(r.meta.contains("scene"));
      CHECK(decode_png(read_file(cfg.output_root / loaded.entries[0].paths.at("grid"))).width == 32);
    }
    // re-running a finished root changes nothing
    const auto before = tree(cfg.output_root);
    const auto again = run_pipeline(cfg, offline());
    CHECK(again.advanced.empty());
    CHECK(canonical_manifest_text(again.manifest) == canonical_manifest_text(res.manifest));
    CHECK(tree(cfg.output_root) == before);

    PipelineConfig other = cfg;
    other.seed = 12;
    CHECK_THROWS_AS(run_pipeline(other, offline()), ConfigError);
  }

  TEST_CASE("interrupt and resume match an uninterrupted run") {
    TempDir tmp("resume");
    const auto bank = toy_bank(tmp.path, 12);
    const auto full_cfg = config_for(bank, tmp.path / "full");
    run_pipeline(full_cfg, offline());

    auto cfg = config_for(bank, tmp.path / "part");
    cfg.workers = 2;
    for (int stop_at : {5, 9, 4}) {
      std::atomic<int> ops{0};
      const auto r = run_pipeline(cfg, offline(), {[&] { return ops++ >= stop_at; }});
      CHECK_FALSE(r.completed);
    }
    const auto last = run_pipeline(cfg, offline());
    CHECK(last.completed);
    CHECK(canonical_manifest_text(load_manifest(cfg.output_root)) == canonical_manifest_text(load_manifest(full_cfg.output_root)));
    CHECK(tree(cfg.output_root) == tree(full_cfg.output_root));
  }

  TEST_CASE("failures are isolated per record") {
    TempDir tmp("fail");
    const auto bank = toy_bank(tmp.path, 6);
    auto cfg = config_for(bank, tmp.path / "out");
    auto real = std::make_shared<OfflineBackend>(OfflineBackend::Options{16, 0.0, 0});
    auto flaky = std::make_shared<ScriptedClient>();
    flaky->fn = [&](const GeneratorRequest& r) -> GeneratorResponse {
      if (r.prompt.find("number 2") != std::string::npos) throw RemoteError("HTTP 500");
      if (r.prompt.find("number 4") != std::string::npos) return GeneratorResponse{{}, "x", 0};
      return real->call(r);
    };
    const auto res = run_pipeline(cfg, {real, flaky});
    CHECK(res.failed == 2);
    CHECK(res.completed);
    const auto& m = res.manifest;
    CHECK(m.find(2)->record.stage == Stage::failed);
    CHECK(m.find(2)->record.error.find("nvs") != std::string::npos);
    CHECK(m.find(4)->record.stage == Stage::failed);
    CHECK(m.counts().at(DataSource::synthetic_nvs_a).at(Stage::assembled) == 4);
    CHECK(load_assembled(cfg.output_root, m).size() == 4);
  }

  TEST_CASE("config validation") {
    PipelineConfig c;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.prompt_bank = "p.txt";
    c.output_root = "out";
    c.target_count = 1000000;
    CHECK_NOTHROW(c.validate());
    c.workers = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK(record_seed(1, 5) == record_seed(1, 5));
    CHECK(record_seed(1, 5) != record_seed(1, 6));
    CHECK(record_seed(1, 5) != record_seed(2, 5));
  }

  TEST_CASE("more slots than prompts cycle through the bank") {
    TempDir tmp("cycle");
    const auto bank = toy_bank(tmp.path, 3);
    auto cfg = config_for(bank, tmp.path / "out");
    cfg.target_count = 7;
    const auto res = run_pipeline(cfg, offline());
    REQUIRE(res.manifest.entries.size() == 7);
    CHECK(res.manifest.entries[6].record.prompt == res.manifest.entries[0].record.prompt);
    CHECK(res.manifest.entries[6].record.record_id != res.manifest.entries[0].record.record_id);
  }
}

TEST_SUITE("storage") {
  std::vector<MultiViewRecord> sample_records(int n) {
    Rng rng = make_rng(77);
    auto recs = render_toy_dataset(n, 8, rng);
    for (std::size_t i = 0; i < recs.size(); ++i) {
      auto& r = recs[i];
      r.caption_short = fmt::format("caption {} with \"quotes\" and caf\xC3\xA9", i);
      if (i % 3) r.quality = label_from_score(static_cast<int>(i % 6), "because");
      r.provenance.seed = i * 1234567891ULL;
      r.provenance.timestamps["assembled"] = "2026-01-01T00:00:00Z";
      r.meta["weight"] = 0.1 * static_cast<double>(i);
      // 8px renders of nearby scenes can coincide; ids must not
      r.views[3].set(0, 0, {static_cast<std::uint8_t>(i), static_cast<std::uint8_t>(i >> 8), 7});
      seal(r);
    }
    return recs;
  }

  TEST_CASE("manifest text round trip and tamper checks") {
    DatasetManifest m;
    m.run = {{"seed", 3}};
    int idx = 0;
    for (auto& r : sample_records(5)) m.entries.push_back({idx++, r, {{"view0", "x.png"}}});
    for (auto& e : m.entries) e.record.views = {}, e.record.grid = {};
    const std::string text = manifest_to_text(m);
    CHECK(manifest_from_text(text) == m);
    CHECK(canonical_manifest_text(m).find("timestamps") == std::string::npos);

    std::string bad = text;
    bad.replace(bad.find("\"assembled\":5"), 13, "\"assembled\":4");
    CHECK_THROWS_AS(manifest_from_text(bad), IntegrityError);
    DatasetManifest dup = m;
    dup.entries[1].index = 0;
    CHECK_THROWS_AS(manifest_from_text(manifest_to_text(dup)), IntegrityError);

    TempDir tmp("manifest");
    save_manifest(tmp.path, m);
    CHECK_THROWS_AS(load_manifest(tmp.path), IntegrityError);  // x.png missing
    CHECK(load_manifest(tmp.path, false) == m);
  }

  TEST_CASE("shard round trip is exact") {
    TempDir tmp("shard");
    const auto recs = sample_records(100);
    write_shard(recs, tmp.path);
    const auto back = read_shard(tmp.path);
    REQUIRE(back.size() == recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i) {
      CHECK(back[i] == recs[i]);
      for (int v = 0; v < 4; ++v)
        CHECK(read_file(tmp.path / fmt::format("{}/view{}.png", recs[i].record_id, v)) == encode_png(recs[i].views[static_cast<std::size_t>(v)]));
    }
    CHECK_THROWS_AS(write_shard(std::span<const MultiViewRecord>(), tmp.path), ParameterError);
    auto unsealed = recs[0];
    unsealed.views[1].pixels[0] ^= 1;
    CHECK_THROWS_AS(write_shard(std::span(&unsealed, 1), tmp.path / "x"), ParameterError);
  }

  TEST_CASE("every single flipped byte is detected") {
    TempDir tmp("flip");
    const auto recs = sample_records(3);
    write_shard(recs, tmp.path);
    const auto files = tree(tmp.path);
    std::size_t flips = 0;
    for (const auto& [rel, bytes] : files) {
      for (std::size_t i = 0; i < bytes.size(); ++i) {
        Bytes b = bytes;
        b[i] ^= 0xFF;
        atomic_write(tmp.path / rel, b);
        bool caught = false;
        try {
          read_shard(tmp.path);
        } catch (const IntegrityError&) {
          caught = true;
        }
        if (!caught) FAIL_CHECK("undetected flip in " << rel << " at byte " << i);
        ++flips;
      }
      atomic_write(tmp.path / rel, bytes);
    }
    CHECK(flips > 1000);
    CHECK(read_shard(tmp.path).size() == 3);
    fs::remove(tmp.path / recs[1].record_id / "view2.png");
    try {
      read_shard(tmp.path);
      FAIL("no error");
    } catch (const IntegrityError& e) {
      CHECK(std::string(e.what()).find(recs[1].record_id) != std::string::npos);
    }
  }
}
