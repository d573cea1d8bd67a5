// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "json.hpp"
#include "ufc/diffcore/tensor.hpp"

namespace ufc::data {

using diffcore::Tensor;

/// N x d instances in [0, 1] with integer class labels.
struct LabeledDataset {
  Tensor instances = Tensor::zeros({0, 0});
  std::vector<std::int32_t> labels;
  std::size_t class_count = 0;
  std::uint32_t precision_bits = 32;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const { return instances.rank() == 2 ? instances.dim(1) : 0; }

  /// Throws ContractError unless shapes agree, labels are in range and every class is present.
  void validate() const;

  std::vector<std::size_t> class_counts() const;
  std::vector<std::vector<std::size_t>> indices_by_class() const;
  LabeledDataset subset(std::span<const std::size_t> indices) const;
  Tensor one_hot() const;
};

struct ToyParams {
  std::size_t classes = 10;
  std::size_t dim = 64;
  std::size_t n_per_class = 200;
  double spread = 0.3;
  std::uint64_t seed = 1;
};

struct ToyDataset {
  LabeledDataset train;
  LabeledDataset test;
  Tensor templates;  // C x d
};

/// Isotropic Gaussian clouds around smooth random class templates, clipped to
/// [0, 1], split 80/20 per class.
ToyDataset generate_toy_dataset(const ToyParams& params);

/// Smooth pattern in [0.15, 0.85]; 2-D when d is a perfect square.
std::vector<float> smooth_template(std::size_t dim, std::uint64_t seed);

/// Number of test instances a class of size n contributes to an 80/20 split.
std::size_t test_share(std::size_t n);

/// One natural instance per class, rows ordered by label.
struct AnchorSet {
  Tensor instances = Tensor::zeros({0, 0});  // C x d
  std::vector<std::int32_t> labels;
  std::vector<std::size_t> source_indices;
};

/// Anchor set k of a without-replacement schedule: each class is permuted once
/// (by `seed`) and subset k takes the k-th element. BudgetError if a class has
/// fewer than k + 1 instances.
AnchorSet sample_anchor_set(const LabeledDataset& dataset, std::size_t k_index, std::uint64_t seed);

/// Scalar mean / std over all elements; used for the model input layer.
struct InputStats {
  float mean = 0.0f;
  float std = 1.0f;
};
InputStats input_statistics(const Tensor& instances);

/// manifest.json + instances.bin (LE float32) + labels.bin (LE int32). `meta`
/// is stored verbatim under the manifest's "meta" key.
void save_dataset(const std::filesystem::path& dir, const LabeledDataset& dataset,
                  const nlohmann::json& meta = nlohmann::json::object());
LabeledDataset load_dataset(const std::filesystem::path& dir);

}  // namespace ufc::data
