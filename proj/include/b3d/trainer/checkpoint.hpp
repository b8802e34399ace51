#pragma once

#include <filesystem>

#include "b3d/core/codec.hpp"
#include "b3d/trainer/train.hpp"

namespace b3d {

// Binary container: "B3DCKPT1", u32 metadata length + JSON metadata, u32
// tensor count, per tensor {u32 name length, name, u32 rank, u64 dims...},
// then every tensor's f64 values (column-major) in table order. All integers
// and floats little-endian.
Bytes encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> data);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace b3d
