#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "segadapt/params.hpp"

namespace segadapt {

// UNCK1 layout, little-endian: "UNCK1\n", u32 entry count, then per entry
// u16 name length, name bytes, u8 rank, rank x u32 dims, f32 payload.

std::vector<std::uint8_t> encode_checkpoint(const ModelParams<float>& params);
ModelParams<float> decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const ModelParams<float>& params, const std::filesystem::path& path);
ModelParams<float> load_checkpoint(const std::filesystem::path& path);

struct PartialLoadReport {
  std::vector<std::string> transferred;
  /// Target entries missing from the file or with a different shape; they
  /// keep the fresh initialisation the target was built with.
  std::vector<std::string> reinitialized;
};

/// Copies every entry whose name and shape match from the checkpoint into
/// `target`, which should be freshly built.
PartialLoadReport load_checkpoint_partial(const std::filesystem::path& path, ModelParams<float>& target);
PartialLoadReport transfer_matching(const ModelParams<float>& source, ModelParams<float>& target);

}  // namespace segadapt
