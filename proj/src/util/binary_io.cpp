// SPDX-License-Identifier: Apache-2.0
#include "ufc/util/binary_io.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <sstream>

#include "ufc/errors.hpp"

namespace ufc::io {
namespace fs = std::filesystem;

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xffu));
  out.push_back(static_cast<char>((v >> 8) & 0xffu));
  out.push_back(static_cast<char>((v >> 16) & 0xffu));
  out.push_back(static_cast<char>((v >> 24) & 0xffu));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::string read_exact(const fs::path& path, std::size_t expected_count) {
  std::string bytes = read_text(path);
  if (bytes.size() != expected_count * 4) {
    throw ArtifactError(path.string(), "expected " + std::to_string(expected_count * 4) +
                                           " bytes, found " + std::to_string(bytes.size()));
  }
  return bytes;
}

}  // namespace

void write_f32_le(const fs::path& path, std::span<const float> values) {
  std::string out;
  out.reserve(values.size() * 4);
  for (float v : values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  write_text(path, out);
}

std::vector<float> read_f32_le(const fs::path& path, std::size_t expected_count) {
  const std::string bytes = read_exact(path, expected_count);
  std::vector<float> values(expected_count);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  for (std::size_t i = 0; i < expected_count; ++i)
    values[i] = std::bit_cast<float>(get_u32(p + 4 * i));
  return values;
}

void write_i32_le(const fs::path& path, std::span<const std::int32_t> values) {
  std::string out;
  out.reserve(values.size() * 4);
  for (std::int32_t v : values) put_u32(out, static_cast<std::uint32_t>(v));
  write_text(path, out);
}

std::vector<std::int32_t> read_i32_le(const fs::path& path, std::size_t expected_count) {
  const std::string bytes = read_exact(path, expected_count);
  std::vector<std::int32_t> values(expected_count);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  for (std::size_t i = 0; i < expected_count; ++i)
    values[i] = static_cast<std::int32_t>(get_u32(p + 4 * i));
  return values;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArtifactError(path.string(), "cannot open for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw ArtifactError(path.string(), "write failed");
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError(path.string(), "cannot open for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void prepare_output_dir(const fs::path& dir, bool force) {
  std::error_code ec;
  if (fs::exists(dir, ec)) {
    if (!force) throw ArtifactError(dir.string(), "already exists (pass --force to overwrite)");
    fs::remove_all(dir, ec);
    if (ec) throw ArtifactError(dir.string(), "cannot remove: " + ec.message());
  }
  fs::create_directories(dir, ec);
  if (ec) throw ArtifactError(dir.string(), "cannot create: " + ec.message());
}

}  // namespace ufc::io
