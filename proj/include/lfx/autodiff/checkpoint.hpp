#pragma once

#include <filesystem>

#include <json.hpp>

#include "lfx/autodiff/parameters.hpp"

namespace lfx::ad {

// Binary parameter container:
//   "LFCK" | u32 version | u64 manifest bytes | manifest JSON | raw buffers
// The manifest lists {name, shape, dtype, offset, count} for every tensor
// plus free-form metadata under "model"; buffers are little-endian float32
// in manifest order.
struct Checkpoint {
  nlohmann::json model;
  ParameterStore<float> params;
};

void save_checkpoint(const std::filesystem::path& path, const ParameterStore<float>& params,
                     const nlohmann::json& model);

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace lfx::ad
