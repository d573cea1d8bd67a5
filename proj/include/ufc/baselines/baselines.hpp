// SPDX-License-Identifier: Apache-2.0
//
// Comparators with one label per instance: a random coreset and a
// class-specific synthesizer that optimizes every image toward its own class.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "ufc/data/dataset.hpp"
#include "ufc/distill/distill.hpp"
#include "ufc/student/student.hpp"

namespace ufc::baselines {

using diffcore::Tensor;

enum class BaselineKind { Coreset, ClassSpecific };
std::string to_string(BaselineKind kind);

/// ipc * C instances, grouped by class (rows c * ipc .. c * ipc + ipc - 1).
struct BaselineSet {
  BaselineKind kind = BaselineKind::Coreset;
  Tensor instances = Tensor::zeros({0, 0});
  Tensor labels = Tensor::zeros({0, 0});  // one-hot or ensemble soft, N x C
  std::vector<std::int32_t> classes;      // pre-assigned class of every row
  std::vector<std::size_t> source_indices;
  std::size_t ipc = 0;
  std::size_t C = 0;
  std::size_t dim = 0;
  std::uint32_t precision_bits = 32;
  std::string label_source = "onehot";    // "onehot" | "ensemble"
  nlohmann::json provenance = nlohmann::json::object();
  std::vector<float> initial_ce;          // class-specific only, per row
  std::vector<float> final_ce;

  std::size_t size() const noexcept { return classes.size(); }
  void validate() const;
};

/// The first ipc entries of a seeded per-class permutation; rows ordered by class.
std::vector<std::size_t> coreset_indices(const data::LabeledDataset& dataset, std::size_t ipc, std::uint64_t seed);

/// ipc uniform picks per class without replacement, one-hot labels.
/// BudgetError naming the class when it has fewer than ipc instances.
BaselineSet random_coreset(const data::LabeledDataset& dataset, std::size_t ipc, std::uint64_t seed);

/// Replaces the labels with the ensemble's soft labels.
void relabel_with(BaselineSet& set, const distill::Ensemble& ensemble);

enum class InitMode { Real, Noise };
InitMode parse_init_mode(const std::string& name);

/// Which rows share one optimization batch (and so one set of BN statistics).
/// Slot: slot j of every class, as SRe2L batches one image per class.
/// Class: all ipc slots of one class.
enum class BnBatch { Slot, Class };
BnBatch parse_bn_batch(const std::string& name);

struct ClassSpecificParams {
  std::size_t ipc = 10;
  double alpha = 0.01;
  distill::SynthesisRecipe recipe;
  std::uint64_t seed = 11;
  InitMode init = InitMode::Real;
  BnBatch batch = BnBatch::Slot;
  unsigned threads = 1;
};

/// Optimizes each batch (see BnBatch) against `teacher` with
/// J = sum CE(f(s), one-hot(class)) + alpha * n * L_BN, using the compensator
/// Adam recipe. A row's gradient depends on its own label only. Real init uses the coreset selection for the same seed.
/// Every slot keeps its own best iterate: the lowest-J iterate at which that
/// slot's CE does not exceed its initial value. The result is relabeled with
/// `ensemble`.
BaselineSet class_specific_synthesis(const data::LabeledDataset& dataset, const nn::Model& teacher,
                                     const distill::Ensemble& ensemble, const ClassSpecificParams& params);

student::TrainingSet to_training_set(const BaselineSet& set);

nlohmann::json baseline_manifest(const BaselineSet& set);
void save_baseline(const std::filesystem::path& dir, const BaselineSet& set);
BaselineSet load_baseline(const std::filesystem::path& dir);

}  // namespace ufc::baselines
