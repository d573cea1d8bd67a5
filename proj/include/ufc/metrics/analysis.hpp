// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "ufc/data/dataset.hpp"
#include "ufc/distill/distill.hpp"
#include "ufc/nn/model.hpp"
#include "ufc/util/rng.hpp"

namespace ufc::metrics {

using diffcore::Tensor;

struct DuplicationReport {
  std::vector<double> per_class;  // NaN for classes with fewer than two usable rows
  double mean = 0.0;              // over measured classes
  std::size_t excluded = 0;       // zero-norm feature vectors skipped
};

/// Mean over classes of the mean pairwise cosine similarity of penultimate features.
DuplicationReport feature_duplication(const nn::Model& probe, const Tensor& instances,
                                      std::span<const std::int32_t> labels, std::size_t class_count);

/// Same statistic on precomputed feature rows.
DuplicationReport duplication_of_features(const Tensor& features, std::span<const std::int32_t> labels,
                                          std::size_t class_count);

/// CE of `label` at anchor + a * u + b * v for a (rows), b (columns) on an
/// evenly spaced grid over [-extent, extent]. Directions are scaled to unit
/// norm; ContractError when they are (numerically) parallel or zero.
Tensor loss_landscape_grid(const nn::Model& model, const Tensor& anchor, std::int32_t label, const Tensor& dir_u,
                           const Tensor& dir_v, double extent, std::size_t resolution);

void write_grid_csv(const std::filesystem::path& path, const Tensor& grid);

struct LinearityGap {
  double lambda = 0.0;
  double mean_gap = 0.0;
  double max_gap = 0.0;
};

/// For each lambda: per pair, mean over classes of
/// |relabel(l a + (1 - l) b) - (l relabel(a) + (1 - l) relabel(b))|; reports
/// the mean and max over pairs. Measured only, never thresholded.
std::vector<LinearityGap> label_linearity_gap(const distill::Ensemble& ensemble, const Tensor& instances,
                                              std::span<const std::pair<std::size_t, std::size_t>> pairs,
                                              std::span<const double> lambdas);

/// `count` random pairs of distinct rows out of n.
std::vector<std::pair<std::size_t, std::size_t>> sample_pairs(std::size_t n, std::size_t count, Rng& rng);

/// CSV with header "label,f0,...,f{D-1}" and one row per instance.
void export_penultimate_features(const nn::Model& model, const data::LabeledDataset& dataset,
                                 const std::filesystem::path& path);

}  // namespace ufc::metrics
