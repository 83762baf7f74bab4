#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "scnn/model.hpp"

SCNN_NAMESPACE_BEGIN

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

struct CheckpointInfo {
  int cycle = 0;
  std::uint64_t seed = 0;
  std::string phase;
};

struct LoadedCheckpoint {
  EmbeddedNet net;
  CheckpointInfo info;
};

/// Binary layout: "SCNNCKPT", u32 version, net config, named tensors stored as
/// little-endian f64, then an FNV-1a trailer over everything before it.
void save_checkpoint(const std::filesystem::path& path, const EmbeddedNet& net, const CheckpointInfo& info = {});
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

SCNN_NAMESPACE_END
