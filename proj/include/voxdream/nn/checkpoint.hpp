#pragma once

#include <cstdint>
#include <string>

#include "voxdream/nn/graph.hpp"

namespace voxdream::nn {

// Checkpoint file: "VDCK" magic, u32 version, u32 manifest length, manifest
// JSON (model name, seed, config hash, bit width, ordered param names/shapes),
// then one little-endian float block per param in manifest order. bits=64
// round-trips exactly; bits=32 halves the file size.
void save_checkpoint(const std::string& path, const std::string& model, std::uint64_t seed,
                     const std::string& config_hash, ParamStore& ps, int bits = 64);

// Fills an already-constructed ParamStore; names and shapes must match.
void load_checkpoint(const std::string& path, const std::string& model, ParamStore& ps);

bool checkpoint_exists(const std::string& path);

}  // namespace voxdream::nn
