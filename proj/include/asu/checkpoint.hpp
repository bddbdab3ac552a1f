#pragma once

#include <filesystem>

#include "asu/model.hpp"

namespace asu {

// Bit-exact checkpoint: magic "ASUCKPT1", 4-byte LE manifest length, UTF-8
// JSON manifest ({config, tensors:[{name, shape, byte_offset}]}), then
// little-endian float64 payloads in manifest order.
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

// FNV-1a over the raw file bytes; used for teacher-frozenness checks and
// run manifests.
std::uint64_t file_checksum(const std::filesystem::path& path);
std::uint64_t params_checksum(const ModelParams& params);

}  // namespace asu
