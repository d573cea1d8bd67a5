// SPDX-License-Identifier: Apache-2.0
//
// Byte-exact storage accounting. Distilled bundles and baseline sets go
// through the same path: images, compensators, labels and the manifest text
// are counted at their declared precision and divided by the original
// dataset's instance bytes.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "ufc/baselines/baselines.hpp"
#include "ufc/data/dataset.hpp"
#include "ufc/distill/bundle_io.hpp"
#include "ufc/distill/distill.hpp"

namespace ufc::metrics {

/// Static labels are stored once; dynamic(E) labels are regenerated for each of
/// E epochs, so E per-instance labels count against the budget.
struct LabelBudget {
  bool dynamic = false;
  std::size_t epochs = 1;

  static LabelBudget static_labels() { return {}; }
  static LabelBudget dynamic_labels(std::size_t e) { return {true, e}; }
  std::size_t multiplier() const noexcept { return dynamic ? epochs : 1; }
};

struct BudgetReport {
  std::uint64_t image_bytes = 0;
  std::uint64_t compensator_bytes = 0;
  std::uint64_t label_bytes = 0;
  std::uint64_t manifest_bytes = 0;
  std::uint64_t original_bytes = 0;
  double cr = 0.0;
  LabelBudget labels;

  std::uint64_t total_bytes() const noexcept { return image_bytes + compensator_bytes + label_bytes + manifest_bytes; }
  nlohmann::json to_json() const;
};

/// Instance bytes of the original dataset at its declared precision.
std::uint64_t original_bytes(const data::LabeledDataset& original);

/// Shared accounting path. A payload with no floats at all is an empty bundle
/// and reports zero bytes throughout.
BudgetReport budget_from_parts(const distill::BundlePayload& payload, std::uint64_t manifest_bytes,
                               std::uint32_t precision_bits, std::uint64_t original, LabelBudget labels);

BudgetReport compression_ratio(const distill::DistilledDataset& bundle, const data::LabeledDataset& original,
                               LabelBudget labels = {});
BudgetReport compression_ratio(const baselines::BaselineSet& set, const data::LabeledDataset& original,
                               LabelBudget labels = {});

/// Same report computed from the file sizes of a saved bundle directory.
BudgetReport budget_from_directory(const std::filesystem::path& dir, const data::LabeledDataset& original,
                                   LabelBudget labels = {});

}  // namespace ufc::metrics
