#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "b3d/core/image.hpp"

namespace b3d {

using Bytes = std::vector<std::uint8_t>;

// Lossless PNG (8-bit RGB). Output carries no time chunks, so encoding is a
// pure function of the pixels.
Bytes encode_png(const Image& img);
Image decode_png(std::span<const std::uint8_t> data);

std::string base64_encode(std::span<const std::uint8_t> data);
Bytes base64_decode(std::string_view text);

std::string sha256_hex(std::span<const std::uint8_t> data);
std::string sha256_hex(std::string_view text);

Bytes read_file(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);

// Writes to a sibling temp file then renames over the target.
void atomic_write(const std::filesystem::path& path, std::span<const std::uint8_t> data);
void atomic_write(const std::filesystem::path& path, std::string_view text);

}  // namespace b3d
