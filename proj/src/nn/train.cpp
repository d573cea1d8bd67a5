// SPDX-License-Identifier: Apache-2.0
#include "ufc/nn/train.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "ufc/nn/losses.hpp"
#include "ufc/nn/optim.hpp"
#include "ufc/util/rng.hpp"

namespace ufc::nn {

double top1_accuracy(const Model& model, const Tensor& inputs, std::span<const std::int32_t> labels) {
  if (labels.empty()) return 0.0;
  const Tensor logits = forward_logits(model, inputs);
  const std::size_t c = logits.dim(1);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = logits.row(i);
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (row[j] > row[best]) best = j;
    hits += static_cast<std::int32_t>(best) == labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> order, std::size_t batch_size) {
  if (batch_size == 0) throw ContractError("batch size must be positive");
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    if (end - start < 2) break;
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

TrainedTeacher train_teacher(const data::LabeledDataset& train, const ModelSpec& spec,
                             const TeacherRecipe& recipe, const data::LabeledDataset* test) {
  train.validate();
  for (std::size_t n : train.class_counts())
    if (n < 2) throw ContractError("train_teacher: every class needs >= 2 instances");
  if (spec.input_dim != train.dim() || spec.class_count != train.class_count) {
    throw ContractError("train_teacher: spec does not match dataset dims");
  }

  TrainedTeacher out;
  out.model = Model::initialized(spec, mix_seed(recipe.seed, static_cast<std::uint64_t>(spec.architecture)));
  const auto stats = data::input_statistics(train.instances);
  out.model.set_input_normalization(stats.mean, stats.std);

  const Tensor targets = train.one_hot();
  const std::size_t n = train.size(), d = train.dim(), c = train.class_count;
  const std::size_t steps_per_epoch = make_batches(std::vector<std::size_t>(n), recipe.batch_size).size();
  const CosineSchedule schedule{recipe.lr, recipe.epochs * steps_per_epoch};
  Sgd opt(recipe.momentum, recipe.weight_decay);
  Rng order_rng = make_rng(recipe.seed, 0x5eed0 + static_cast<std::uint64_t>(spec.architecture));

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < recipe.epochs; ++epoch) {
    const auto order = permutation(n, order_rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (const auto& batch : make_batches(order, recipe.batch_size)) {
      std::vector<float> xb, yb;
      xb.reserve(batch.size() * d);
      yb.reserve(batch.size() * c);
      for (std::size_t i : batch) {
        const auto xr = train.instances.row(i);
        const auto yr = targets.row(i);
        xb.insert(xb.end(), xr.begin(), xr.end());
        yb.insert(yb.end(), yr.begin(), yr.end());
      }
      Tape<float> tape;
      const auto params = bind<float>(tape, out.model, true);
      const auto trace = forward(out.model, params, tape.constant(Tensor({batch.size(), d}, std::move(xb))), Mode::Train);
      const auto loss = cross_entropy(trace.logits, Tensor({batch.size(), c}, std::move(yb)));
      const auto grads = diffcore::backward(tape, loss);
      std::vector<Tensor> g;
      for (const auto& v : params.flat()) g.push_back(grads[v]);
      update_running_stats(out.model, trace);
      const auto trainable = out.model.trainable();
      opt.step(trainable, g, schedule.at(step++));
      loss_sum += loss.value().item();
      ++batches;
    }
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
    rec.test_top1 = test ? top1_accuracy(out.model, test->instances, test->labels)
                         : std::numeric_limits<double>::quiet_NaN();
    out.trace.push_back(rec);
  }
  out.train_top1 = top1_accuracy(out.model, train.instances, train.labels);
  if (out.train_top1 < recipe.target_accuracy) {
    throw ConvergenceError("teacher " + to_string(spec.architecture) + " reached train top-1 " +
                               std::to_string(out.train_top1) + " < target " +
                               std::to_string(recipe.target_accuracy),
                           out.train_top1);
  }
  return out;
}

}  // namespace ufc::nn
