#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "biaslens/network.hpp"

namespace biaslens {

/// Little-endian: "BLCK", u32 version=1, u32 length + network config text,
/// u32 tensor count, then per tensor u32 name length, name, u32 rows,
/// u32 cols, rows*cols float64 values. Includes batchnorm running stats.
std::vector<std::uint8_t> encode_checkpoint(const Network& net);
Network decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Network& net, const std::filesystem::path& path);
Network load_checkpoint(const std::filesystem::path& path);

}  // namespace biaslens
