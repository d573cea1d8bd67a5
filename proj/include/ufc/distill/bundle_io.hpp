// SPDX-License-Identifier: Apache-2.0
//
// Bundle directory layout (shared by distilled datasets and baseline sets):
//
//   manifest.json     kind tag, dimensions, provenance, per-file float counts
//   anchors.bin       images (LE float32)
//   compensators.bin  compensators (LE float32, empty for baselines)
//   labels.bin        soft labels (LE float32, C per stored label)
//
// Every byte of the directory belongs to exactly one of these four files, which
// is what budget accounting relies on.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "ufc/distill/distill.hpp"

namespace ufc::distill {

struct BundlePayload {
  std::vector<float> images;
  std::vector<float> compensators;
  std::vector<float> labels;
};

inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kImagesFile = "anchors.bin";
inline constexpr const char* kCompensatorsFile = "compensators.bin";
inline constexpr const char* kLabelsFile = "labels.bin";

/// Adds the "files" table to `manifest` and writes all four files.
void write_bundle(const std::filesystem::path& dir, nlohmann::json manifest, const BundlePayload& payload);
/// Exact manifest text write_bundle() would produce.
std::string manifest_text(nlohmann::json manifest, const BundlePayload& payload);

nlohmann::json read_bundle_manifest(const std::filesystem::path& dir);
BundlePayload read_bundle_payload(const std::filesystem::path& dir, const nlohmann::json& manifest);
std::string bundle_kind(const std::filesystem::path& dir);

nlohmann::json bundle_manifest(const DistilledDataset& bundle);
BundlePayload bundle_payload(const DistilledDataset& bundle);

void save_bundle(const std::filesystem::path& dir, const DistilledDataset& bundle);
DistilledDataset load_bundle(const std::filesystem::path& dir);

}  // namespace ufc::distill
