// SPDX-License-Identifier: Apache-2.0
//
// Student side: integrate anchors with compensators, MixUp, and KL training
// of a fresh model on the result.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "ufc/data/dataset.hpp"
#include "ufc/distill/distill.hpp"
#include "ufc/nn/model.hpp"
#include "ufc/nn/train.hpp"
#include "ufc/util/rng.hpp"

namespace ufc::student {

using diffcore::Tensor;

/// Where an integrated instance came from: subset k, anchor i, compensator j.
struct Origin {
  std::size_t k = 0;
  std::size_t i = 0;
  std::size_t j = 0;
  bool operator==(const Origin&) const = default;
};

/// Instances with label distributions. Also used for baseline sets, whose
/// origins are (0, row, 0).
struct TrainingSet {
  Tensor instances = Tensor::zeros({0, 0});  // N x d
  Tensor labels = Tensor::zeros({0, 0});     // N x C
  std::vector<Origin> origins;

  std::size_t size() const noexcept { return origins.size(); }
};

/// s = x_i + u_j for every (k, i, j), k-major then anchor then compensator;
/// row order matches the static label matrix. ArtifactError on a malformed bundle.
TrainingSet integrate(const distill::DistilledDataset& bundle);

/// Gamma(shape, 1) by Marsaglia-Tsang.
double sample_gamma(double shape, Rng& rng);
/// Beta(a, b) as a ratio of gammas.
double sample_beta(double a, double b, Rng& rng);

struct MixupBatch {
  Tensor inputs;
  Tensor labels;
  double lambda = 1.0;  // the symmetrized value actually used, in [0.5, 1]
  std::vector<std::size_t> partner;
};

/// Mixes row r with row partner[r] using lambda' = max(lambda, 1 - lambda).
/// Arithmetic is done in double and rounded once, so self-mixing and
/// lambda' = 1 are exact identities.
MixupBatch mixup_with(const Tensor& inputs, const Tensor& labels, std::span<const std::size_t> partner, double lambda);

/// Shuffles the batch for partners and draws one lambda ~ Beta(beta, beta).
MixupBatch mixup(const Tensor& inputs, const Tensor& labels, double beta, Rng& rng);

enum class LabelMode { Static, Dynamic };

struct StudentRecipe {
  std::size_t epochs = 100;  // static-mode count; dynamic mode runs ceil(epochs / M)
  std::size_t batch_size = 64;
  double lr = 1e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double mixup_beta = 1.0;
  bool use_mixup = true;
  std::optional<double> fixed_lambda;  // bypasses the Beta draw
  std::uint64_t seed = 21;
};

struct StudentResult {
  nn::Model model;
  std::vector<nn::EpochRecord> trace;
  std::vector<float> batch_losses;
  std::size_t epochs_run = 0;
};

/// ceil(epochs / M).
std::size_t dynamic_epochs(std::size_t epochs, std::size_t ensemble_size);

/// Trains a fresh student with AdamW on KL(label || student). Static mode uses
/// the stored labels (mixed linearly) and never touches the ensemble. Dynamic
/// mode relabels every mixed batch with `ensemble`.
StudentResult train_student(const TrainingSet& set, const nn::ModelSpec& spec, const StudentRecipe& recipe,
                            LabelMode mode, const distill::Ensemble* ensemble = nullptr,
                            const data::LabeledDataset* test = nullptr);

double evaluate(const nn::Model& model, const data::LabeledDataset& test);

}  // namespace ufc::student
