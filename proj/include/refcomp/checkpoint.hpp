#pragma once

#include <filesystem>
#include <memory>

#include <json.hpp>

#include "refcomp/model.hpp"

namespace refcomp {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout: "RCKP", u32 version, u32 header length, JSON header (model config,
/// tensor index, free-form metadata), then float32 little-endian row-major
/// tensor data. Written atomically.
void save_checkpoint(const Denoiser& model, const std::filesystem::path& path,
                     const nlohmann::json& metadata = nlohmann::json::object());

struct LoadedCheckpoint {
  std::unique_ptr<Denoiser> model;
  nlohmann::json metadata;
};

/// Throws IoError for unreadable or malformed files and ConfigError when the
/// stored tensors disagree with the architecture the config describes.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Every weight rounded through float32, as a save/load round trip would.
void round_to_storage_precision(Denoiser& model);

}  // namespace refcomp
