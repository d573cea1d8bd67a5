// SPDX-License-Identifier: Apache-2.0
#include "ufc/metrics/budget.hpp"

namespace ufc::metrics {
namespace fs = std::filesystem;
using nlohmann::json;

json BudgetReport::to_json() const {
  return {{"image_bytes", image_bytes},
          {"compensator_bytes", compensator_bytes},
          {"label_bytes", label_bytes},
          {"manifest_bytes", manifest_bytes},
          {"total_bytes", total_bytes()},
          {"original_bytes", original_bytes},
          {"cr", cr},
          {"label_mode", labels.dynamic ? "dynamic" : "static"},
          {"label_epochs", labels.multiplier()}};
}

std::uint64_t original_bytes(const data::LabeledDataset& original) {
  return static_cast<std::uint64_t>(original.instances.size()) * original.precision_bits / 8;
}

namespace {

double ratio(std::uint64_t total, std::uint64_t original) {
  return original == 0 ? 0.0 : static_cast<double>(total) / static_cast<double>(original);
}

}  // namespace

BudgetReport budget_from_parts(const distill::BundlePayload& p, std::uint64_t manifest_bytes,
                               std::uint32_t precision_bits, std::uint64_t original, LabelBudget labels) {
  if (precision_bits == 0 || precision_bits % 8 != 0) throw ContractError("budget: precision must be a whole number of bytes");
  if (labels.dynamic && labels.epochs == 0) throw ContractError("budget: dynamic labels need E >= 1");
  BudgetReport r;
  r.labels = labels;
  r.original_bytes = original;
  if (p.images.empty() && p.compensators.empty() && p.labels.empty()) return r;
  const std::uint64_t bytes = precision_bits / 8;
  r.image_bytes = p.images.size() * bytes;
  r.compensator_bytes = p.compensators.size() * bytes;
  r.label_bytes = p.labels.size() * bytes * labels.multiplier();
  r.manifest_bytes = manifest_bytes;
  r.cr = ratio(r.total_bytes(), original);
  return r;
}

BudgetReport compression_ratio(const distill::DistilledDataset& bundle, const data::LabeledDataset& original,
                               LabelBudget labels) {
  const auto payload = distill::bundle_payload(bundle);
  const auto manifest = distill::manifest_text(distill::bundle_manifest(bundle), payload);
  return budget_from_parts(payload, manifest.size(), bundle.precision_bits, original_bytes(original), labels);
}

BudgetReport compression_ratio(const baselines::BaselineSet& set, const data::LabeledDataset& original,
                               LabelBudget labels) {
  distill::BundlePayload payload;
  payload.images = set.instances.vec();
  payload.labels = set.labels.vec();
  const auto manifest = distill::manifest_text(baselines::baseline_manifest(set), payload);
  return budget_from_parts(payload, manifest.size(), set.precision_bits, original_bytes(original), labels);
}

BudgetReport budget_from_directory(const fs::path& dir, const data::LabeledDataset& original, LabelBudget labels) {
  const json m = distill::read_bundle_manifest(dir);
  auto size_of = [&](const char* name) -> std::uint64_t {
    std::error_code ec;
    const auto n = fs::file_size(dir / name, ec);
    if (ec) throw ArtifactError((dir / name).string(), "cannot stat: " + ec.message());
    return n;
  };
  BudgetReport r;
  r.labels = labels;
  r.original_bytes = original_bytes(original);
  r.image_bytes = size_of(distill::kImagesFile);
  r.compensator_bytes = size_of(distill::kCompensatorsFile);
  r.label_bytes = size_of(distill::kLabelsFile) * labels.multiplier();
  r.manifest_bytes = size_of(distill::kManifestFile);
  (void)m;
  r.cr = ratio(r.total_bytes(), r.original_bytes);
  return r;
}

}  // namespace ufc::metrics
