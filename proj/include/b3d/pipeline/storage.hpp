#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "b3d/core/record.hpp"

namespace b3d {

// Every record field except the pixels.
nlohmann::json record_metadata(const MultiViewRecord& record);
// Fills the non-pixel fields of `record`. Throws IntegrityError on a
// malformed document.
void apply_metadata(MultiViewRecord& record, const nlohmann::json& meta);

// ---- dataset manifest -------------------------------------------------------

struct ManifestEntry {
  int index = 0;           // prompt slot this record was generated for
  MultiViewRecord record;  // views/grid left empty in the manifest itself
  std::map<std::string, std::string> paths;  // role -> path relative to the root

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

using StageCounts = std::map<DataSource, std::map<Stage, int>>;

struct DatasetManifest {
  static constexpr int kVersion = 1;
  int version = kVersion;
  nlohmann::json run = nlohmann::json::object();  // fingerprint of the producing config
  std::vector<ManifestEntry> entries;

  StageCounts counts() const;
  const ManifestEntry* find(int index) const;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

// JSON lines: a header object (format, version, run, counts) then one entry
// per line in index order.
std::string manifest_to_text(const DatasetManifest& manifest);
DatasetManifest manifest_from_text(std::string_view text);
// Same text with provenance timestamps removed; two runs that did the same
// work compare equal.
std::string canonical_manifest_text(const DatasetManifest& manifest);

inline constexpr std::string_view kManifestFile = "manifest.jsonl";

void save_manifest(const std::filesystem::path& root, const DatasetManifest& manifest);
// strict: every referenced file must exist under root (IntegrityError).
DatasetManifest load_manifest(const std::filesystem::path& root, bool strict = true);

// Reads the entry's view images and checks them against record_id.
MultiViewRecord load_record(const std::filesystem::path& root, const ManifestEntry& entry);
// Assembled records of a manifest, pixels included.
std::vector<MultiViewRecord> load_assembled(const std::filesystem::path& root, const DatasetManifest& manifest);

// ---- shards -------------------------------------------------------------------

struct ShardEntry {
  std::string record_id;
  std::map<std::string, std::string> files;  // relative path -> sha256 of its bytes
  friend bool operator==(const ShardEntry&, const ShardEntry&) = default;
};

struct ShardIndex {
  static constexpr int kVersion = 1;
  int version = kVersion;
  std::vector<ShardEntry> entries;
  friend bool operator==(const ShardIndex&, const ShardIndex&) = default;
};

inline constexpr std::string_view kShardIndexFile = "index.json";

// <dir>/<record_id>/view{0..3}.png plus meta.json, and <dir>/index.json
// which ends in a line "sha256 <hex of everything before it>". Records must
// be sealed. Empty slice -> ParameterError.
ShardIndex write_shard(std::span<const MultiViewRecord> records, const std::filesystem::path& dir);
// Any mismatch in a digest, id or layout -> IntegrityError naming the record.
std::vector<MultiViewRecord> read_shard(const std::filesystem::path& dir);
ShardIndex read_shard_index(const std::filesystem::path& dir);

}  // namespace b3d
