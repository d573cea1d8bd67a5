// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace ufc::io {

// All binaries are headerless little-endian arrays; element counts live in the manifests.
void write_f32_le(const std::filesystem::path& path, std::span<const float> values);
std::vector<float> read_f32_le(const std::filesystem::path& path, std::size_t expected_count);

void write_i32_le(const std::filesystem::path& path, std::span<const std::int32_t> values);
std::vector<std::int32_t> read_i32_le(const std::filesystem::path& path,
                                      std::size_t expected_count);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

/// Creates `dir`; refuses an existing directory unless `force`, in which case it is emptied.
void prepare_output_dir(const std::filesystem::path& dir, bool force);

}  // namespace ufc::io
