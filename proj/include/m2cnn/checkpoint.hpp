#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "m2cnn/model.hpp"

namespace m2cnn {

/// On-disk layout:
///   "M2CN" | u32 version | u64 manifest length | manifest JSON | f64 payload
/// All integers and floats little-endian. The manifest lists name, shape and
/// group of every tensor (payload order) plus the architecture.
inline constexpr char kCheckpointMagic[4] = {'M', '2', 'C', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ArchConfig arch;
  ParamStore params;
};

std::string encode_checkpoint(const ParamStore& params, const ArchConfig& arch);
/// Throws FormatError (magic/version) or CorruptionError (anything else).
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params, const ArchConfig& arch);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace m2cnn
