// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ufc/data/dataset.hpp"
#include "ufc/distill/synthesis.hpp"
#include "ufc/nn/model.hpp"

namespace ufc::distill {

/// K = floor(ipc * C / (C + M)); BudgetError when that is zero.
std::size_t compute_K(std::size_t ipc, std::size_t classes, std::size_t compensators);

/// Static soft labels: average the members' logits, then one softmax per row.
/// The average is accumulated in double so M identical members reproduce the
/// single-member logits bit for bit.
Tensor relabel(std::span<const nn::Model> ensemble, const Tensor& instances);

/// Teacher models used for synthesis and labeling. Counts every labeling query.
class Ensemble {
 public:
  Ensemble() = default;
  explicit Ensemble(std::vector<nn::Model> members);

  std::size_t size() const noexcept { return members_.size(); }
  const nn::Model& member(std::size_t j) const { return members_.at(j); }
  std::span<const nn::Model> members() const noexcept { return members_; }
  std::vector<nn::ArchitectureId> architectures() const;

  Tensor relabel(const Tensor& instances) const;
  std::size_t query_count() const noexcept { return queries_ ? queries_->load() : 0; }

 private:
  std::vector<nn::Model> members_;
  std::unique_ptr<std::atomic<std::size_t>> queries_ = std::make_unique<std::atomic<std::size_t>>(0);
};

/// S^k = (P^k anchors, U^k compensators, Y^k static labels).
/// static_labels row i * M + j labels anchor i integrated with compensator j.
struct SubsetRecord {
  data::AnchorSet anchors;
  std::vector<UFC> compensators;
  Tensor static_labels = Tensor::zeros({0, 0});
};

struct Provenance {
  std::uint64_t seed = 0;
  double alpha = 0.01;
  SynthesisRecipe recipe;
  std::vector<nn::ArchitectureId> architectures;
  std::string config_hash;
};

struct DistilledDataset {
  std::vector<SubsetRecord> subsets;
  std::size_t M = 0;
  std::size_t C = 0;
  std::size_t dim = 0;
  std::size_t ipc = 0;
  std::uint32_t precision_bits = 32;
  Provenance provenance;

  std::size_t K() const noexcept { return subsets.size(); }
  std::size_t integrated_size() const noexcept { return K() * C * M; }
  /// Checks the record invariants; ArtifactError("bundle", ...) when violated.
  void validate() const;
};

struct DistillParams {
  std::size_t ipc = 10;
  double alpha = 0.01;
  SynthesisRecipe recipe;
  std::uint64_t seed = 11;
  unsigned threads = 1;
  std::string config_hash;
};

/// Compensator j of every subset is optimized against ensemble member j only;
/// every integrated instance is then labeled by the full ensemble. The (k, j)
/// problems may run on `threads` workers; results are merged in (k, j) order.
DistilledDataset distill(const data::LabeledDataset& train, const Ensemble& ensemble, const DistillParams& params);

std::string recipe_hash(const SynthesisRecipe& recipe);

}  // namespace ufc::distill
