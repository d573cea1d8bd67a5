// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ufc/data/dataset.hpp"
#include "ufc/nn/model.hpp"

namespace ufc::nn {

/// Teacher recipe: SGD with momentum, cosine-decayed learning rate, plain CE.
struct TeacherRecipe {
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double target_accuracy = 0.95;
  std::uint64_t seed = 7;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double test_top1 = 0.0;  // NaN when no test set was given
};

struct TrainedTeacher {
  Model model;
  std::vector<EpochRecord> trace;
  double train_top1 = 0.0;
};

/// Fraction of rows whose first argmax equals the label.
double top1_accuracy(const Model& model, const Tensor& inputs, std::span<const std::int32_t> labels);

/// Batches of `batch_size` over a shuffled order; a trailing batch of one row
/// is dropped because train-mode BN needs two rows.
std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> order, std::size_t batch_size);

/// Trains `spec` on `train` (input normalization from its statistics). Throws
/// ConvergenceError when the final train top-1 is below recipe.target_accuracy.
TrainedTeacher train_teacher(const data::LabeledDataset& train, const ModelSpec& spec,
                             const TeacherRecipe& recipe, const data::LabeledDataset* test = nullptr);

}  // namespace ufc::nn
