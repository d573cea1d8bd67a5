// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>

#include "json.hpp"
#include "ufc/nn/model.hpp"

namespace ufc::nn {

/// Writes manifest.json (architecture, dims, parameter table) and params.bin
/// (little-endian float32 in manifest order). `meta` is stored under "meta".
void save_model(const std::filesystem::path& dir, const Model& model,
                const nlohmann::json& meta = nlohmann::json::object());

Model load_model(const std::filesystem::path& dir);

/// Process-wide count of load_model() calls; lets tests prove a code path never
/// touched teacher files.
std::size_t model_load_count();

}  // namespace ufc::nn
