#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crossdiff/nn/parameters.hpp"

namespace crossdiff {

/// Single-file container shared by predictor and fusion-head checkpoints.
///
/// Layout (little-endian):
///   bytes 0-7    magic "CDCKPT\0\0"
///   bytes 8-11   u32 format version
///   bytes 12-19  u64 manifest length L
///   next L bytes UTF-8 JSON manifest
///   data section: raw arrays at the manifest's byte offsets (relative to
///   the start of the data section)
///
/// The manifest holds "format_version", "role", caller metadata under
/// "meta", and "arrays": [{name, shape, dtype, offset, nbytes}, ...].
inline constexpr char kCheckpointMagic[8] = {'C', 'D', 'C', 'K', 'P', 'T', '\0', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Container {
  std::string role;
  nlohmann::json meta;
  nn::ParameterSet<float> arrays;
};

void write_container(const std::string& path, const Container& container);

/// Throws FormatError on a bad magic or version, CorruptionError on a
/// truncated file or an inconsistent manifest.
Container read_container(const std::string& path);

}  // namespace crossdiff
