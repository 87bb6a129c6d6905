#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "disam/network.hpp"

namespace disam {
namespace net {

// Optimizer moments, RNG state and any other trainer state that rides along
// with the parameters so runs can resume exactly.
struct CheckpointExtra {
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, TensorF>> tensors;
};

// Binary format: magic "DISAMCKPT", u32 version, length-prefixed config
// block (key=value lines), named parameter table (name, shape,
// little-endian float32 payload), trailing CRC32. Written via a temp file
// and rename so partial writes never corrupt an existing checkpoint.
void save_checkpoint(ModelBundle& bundle, const std::string& path,
                     const CheckpointExtra* extra = nullptr);

ModelBundle load_checkpoint(const std::string& path, CheckpointExtra* extra = nullptr);

// Throws VersionMismatch when a checkpoint's topology cannot serve a run
// configured with `expected` (seed is allowed to differ).
void require_compatible(const NetworkConfig& stored, const NetworkConfig& expected);

}  // namespace net
}  // namespace disam
