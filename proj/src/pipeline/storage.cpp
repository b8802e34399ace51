#include "b3d/pipeline/storage.hpp"

#include <set>

#include <fmt/format.h>

#include "b3d/core/codec.hpp"
#include "b3d/core/error.hpp"

namespace b3d {

namespace fs = std::filesystem;
using nlohmann::json;

json record_metadata(const MultiViewRecord& r) {
  json j;
  j["record_id"] = r.record_id;
  j["source"] = to_string(r.source);
  j["stage"] = to_string(r.stage);
  j["prompt"] = r.prompt;
  j["caption_short"] = r.caption_short;
  j["caption_long"] = r.caption_long;
  if (r.quality)
    j["quality"] = {{"score", r.quality->score}, {"label", r.quality->name()}, {"rationale", r.quality->rationale}};
  else
    j["quality"] = nullptr;
  j["provenance"] = {{"generator", r.provenance.generator},
                     {"seed", r.provenance.seed},
                     {"timestamps", r.provenance.timestamps}};
  j["meta"] = r.meta;
  j["error"] = r.error;
  return j;
}

void apply_metadata(MultiViewRecord& r, const json& j) {
  try {
    r.record_id = j.at("record_id").get<std::string>();
    r.source = parse_source(j.at("source").get<std::string>());
    r.stage = parse_stage(j.at("stage").get<std::string>());
    r.prompt = j.at("prompt").get<std::string>();
    r.caption_short = j.at("caption_short").get<std::string>();
    r.caption_long = j.at("caption_long").get<std::string>();
    const json& q = j.at("quality");
    if (q.is_null()) {
      r.quality.reset();
    } else {
      r.quality = label_from_score(q.at("score").get<int>(), q.at("rationale").get<std::string>());
      if (q.at("label").get<std::string>() != r.quality->name())
        throw IntegrityError(fmt::format("quality label '{}' does not match score {}", q.at("label").get<std::string>(),
                                         r.quality->score));
    }
    const json& p = j.at("provenance");
    r.provenance.generator = p.at("generator").get<std::string>();
    r.provenance.seed = p.at("seed").get<std::uint64_t>();
    r.provenance.timestamps = p.at("timestamps").get<std::map<std::string, std::string>>();
    r.meta = j.at("meta");
    r.error = j.at("error").get<std::string>();
  } catch (const json::exception& e) {
    throw IntegrityError(fmt::format("record metadata: {}", e.what()));
  } catch (const IntegrityError&) {
    throw;
  } catch (const Error& e) {
    throw IntegrityError(fmt::format("record metadata: {}", e.what()));
  }
}

// ---- manifest ---------------------------------------------------------------

StageCounts DatasetManifest::counts() const {
  StageCounts c;
  for (const auto& e : entries) ++c[e.record.source][e.record.stage];
  return c;
}

const ManifestEntry* DatasetManifest::find(int index) const {
  for (const auto& e : entries)
    if (e.index == index) return &e;
  return nullptr;
}

namespace {

json counts_json(const StageCounts& counts) {
  json j = json::object();
  for (const auto& [source, stages] : counts)
    for (const auto& [stage, n] : stages) j[std::string(to_string(source))][std::string(to_string(stage))] = n;
  return j;
}

json entry_json(const ManifestEntry& e, bool timestamps) {
  json j = record_metadata(e.record);
  if (!timestamps) j["provenance"].erase("timestamps");
  j["index"] = e.index;
  j["paths"] = e.paths;
  return j;
}

std::string to_text(const DatasetManifest& m, bool timestamps) {
  json header = {{"format", "b3d-manifest"}, {"version", m.version}, {"run", m.run}, {"counts", counts_json(m.counts())}};
  std::string out = header.dump() + "\n";
  for (const auto& e : m.entries) out += entry_json(e, timestamps).dump() + "\n";
  return out;
}

}  // namespace

std::string manifest_to_text(const DatasetManifest& manifest) { return to_text(manifest, true); }
std::string canonical_manifest_text(const DatasetManifest& manifest) { return to_text(manifest, false); }

DatasetManifest manifest_from_text(std::string_view text) {
  DatasetManifest m;
  std::size_t pos = 0, line_no = 0;
  json header;
  std::set<int> indices;
  std::set<std::string> ids;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IntegrityError(fmt::format("manifest line {}: {}", line_no, e.what()));
    }
    if (header.is_null()) {
      header = std::move(j);
      continue;
    }
    ManifestEntry e;
    apply_metadata(e.record, j);
    try {
      e.index = j.at("index").get<int>();
      e.paths = j.at("paths").get<std::map<std::string, std::string>>();
    } catch (const json::exception& ex) {
      throw IntegrityError(fmt::format("manifest line {}: {}", line_no, ex.what()));
    }
    if (!indices.insert(e.index).second) throw IntegrityError(fmt::format("manifest line {}: duplicate index {}", line_no, e.index));
    if (!e.record.record_id.empty() && !ids.insert(e.record.record_id).second)
      throw IntegrityError(fmt::format("manifest line {}: duplicate record_id {}", line_no, e.record.record_id));
    m.entries.push_back(std::move(e));
  }
  if (header.is_null() || header.value("format", "") != "b3d-manifest")
    throw IntegrityError("manifest header missing or not a b3d manifest");
  m.version = header.value("version", 0);
  if (m.version != DatasetManifest::kVersion)
    throw IntegrityError(fmt::format("manifest version {} not supported (expected {})", m.version, DatasetManifest::kVersion));
  m.run = header.value("run", json::object());
  if (header.value("counts", json::object()) != counts_json(m.counts()))
    throw IntegrityError("manifest counts do not match its records");
  return m;
}

void save_manifest(const fs::path& root, const DatasetManifest& manifest) {
  atomic_write(root / kManifestFile, manifest_to_text(manifest));
}

DatasetManifest load_manifest(const fs::path& root, bool strict) {
  const fs::path path = root / kManifestFile;
  if (!fs::exists(path)) throw PreconditionError(fmt::format("no manifest at {}", path.string()));
  DatasetManifest m = manifest_from_text(read_text(path));
  if (strict)
    for (const auto& e : m.entries)
      for (const auto& [role, rel] : e.paths)
        if (!fs::exists(root / rel))
          throw IntegrityError(fmt::format("record {} (index {}): missing {} file {}", e.record.record_id, e.index, role, rel));
  return m;
}

MultiViewRecord load_record(const fs::path& root, const ManifestEntry& entry) {
  MultiViewRecord r = entry.record;
  for (int v = 0; v < kViewsPerRecord; ++v) {
    const auto it = entry.paths.find(fmt::format("view{}", v));
    if (it == entry.paths.end())
      throw PreconditionError(fmt::format("record at index {} has no view{} (stage {})", entry.index, v, to_string(entry.record.stage)));
    r.views[static_cast<std::size_t>(v)] = decode_png(read_file(root / it->second));
  }
  const std::string id = compute_record_id(r.views);
  if (!r.record_id.empty() && id != r.record_id)
    throw IntegrityError(fmt::format("record {}: view pixels hash to {}", r.record_id, id));
  r.record_id = id;
  r.grid = assemble_grid(r.views);
  return r;
}

std::vector<MultiViewRecord> load_assembled(const fs::path& root, const DatasetManifest& manifest) {
  std::vector<MultiViewRecord> out;
  for (const auto& e : manifest.entries)
    if (e.record.stage == Stage::assembled) out.push_back(load_record(root, e));
  return out;
}

// ---- shards -----------------------------------------------------------------

namespace {

constexpr std::string_view kTrailer = "sha256 ";

}  // namespace

ShardIndex write_shard(std::span<const MultiViewRecord> records, const fs::path& dir) {
  if (records.empty()) throw ParameterError("write_shard: empty record slice");
  std::set<std::string> seen;
  for (const auto& r : records) {
    if (r.record_id != compute_record_id(r.views))
      throw ParameterError(fmt::format("write_shard: record {} is not sealed", r.record_id));
    if (!seen.insert(r.record_id).second) throw ParameterError(fmt::format("write_shard: duplicate record {}", r.record_id));
  }
  ShardIndex index;
  for (const auto& r : records) {
    ShardEntry e;
    e.record_id = r.record_id;
    for (int v = 0; v < kViewsPerRecord; ++v) {
      const std::string rel = fmt::format("{}/view{}.png", r.record_id, v);
      const Bytes png = encode_png(r.views[static_cast<std::size_t>(v)]);
      atomic_write(dir / rel, png);
      e.files[rel] = sha256_hex(png);
    }
    const std::string rel = r.record_id + "/meta.json";
    const std::string meta = record_metadata(r).dump(2) + "\n";
    atomic_write(dir / rel, meta);
    e.files[rel] = sha256_hex(meta);
    index.entries.push_back(std::move(e));
  }
  json j = {{"format", "b3d-shard"}, {"version", index.version}, {"records", json::array()}};
  for (const auto& e : index.entries) j["records"].push_back({{"record_id", e.record_id}, {"files", e.files}});
  std::string body = j.dump(1) + "\n";
  body += std::string(kTrailer) + sha256_hex(body) + "\n";
  atomic_write(dir / kShardIndexFile, body);
  return index;
}

ShardIndex read_shard_index(const fs::path& dir) {
  const fs::path path = dir / kShardIndexFile;
  if (!fs::exists(path)) throw IntegrityError(fmt::format("shard {} has no index", dir.string()));
  const std::string text = read_text(path);
  // Last line is the trailer; the digest covers every byte before it.
  const std::size_t cut = text.size() >= 2 ? text.rfind('\n', text.size() - 2) : std::string::npos;
  if (text.empty() || text.back() != '\n' || cut == std::string::npos) throw IntegrityError("shard index: missing checksum line");
  const std::string body = text.substr(0, cut + 1);
  const std::string trailer = text.substr(cut + 1, text.size() - cut - 2);
  if (trailer != std::string(kTrailer) + sha256_hex(body)) throw IntegrityError("shard index: checksum mismatch");

  ShardIndex index;
  try {
    const json j = json::parse(body);
    if (j.at("format") != "b3d-shard") throw IntegrityError("shard index: wrong format tag");
    index.version = j.at("version").get<int>();
    if (index.version != ShardIndex::kVersion) throw IntegrityError(fmt::format("shard index version {} not supported", index.version));
    for (const auto& r : j.at("records"))
      index.entries.push_back({r.at("record_id").get<std::string>(), r.at("files").get<std::map<std::string, std::string>>()});
  } catch (const json::exception& e) {
    throw IntegrityError(fmt::format("shard index: {}", e.what()));
  }
  return index;
}

std::vector<MultiViewRecord> read_shard(const fs::path& dir) {
  const ShardIndex index = read_shard_index(dir);
  std::vector<MultiViewRecord> out;
  for (const auto& e : index.entries) {
    auto file = [&](const std::string& rel) {
      const auto it = e.files.find(rel);
      if (it == e.files.end()) throw IntegrityError(fmt::format("record {}: index lists no {}", e.record_id, rel));
      if (!fs::exists(dir / rel)) throw IntegrityError(fmt::format("record {}: missing {}", e.record_id, rel));
      Bytes b = read_file(dir / rel);
      if (sha256_hex(b) != it->second) throw IntegrityError(fmt::format("record {}: checksum mismatch in {}", e.record_id, rel));
      return b;
    };
    if (e.files.size() != kViewsPerRecord + 1)
      throw IntegrityError(fmt::format("record {}: index lists {} files", e.record_id, e.files.size()));
    MultiViewRecord r;
    const Bytes meta = file(e.record_id + "/meta.json");
    try {
      apply_metadata(r, json::parse(meta.begin(), meta.end()));
    } catch (const json::exception& ex) {
      throw IntegrityError(fmt::format("record {}: {}", e.record_id, ex.what()));
    }
    for (int v = 0; v < kViewsPerRecord; ++v) r.views[static_cast<std::size_t>(v)] = decode_png(file(fmt::format("{}/view{}.png", e.record_id, v)));
    if (r.record_id != e.record_id || compute_record_id(r.views) != e.record_id)
      throw IntegrityError(fmt::format("record {}: id does not match its views", e.record_id));
    r.grid = assemble_grid(r.views);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace b3d
