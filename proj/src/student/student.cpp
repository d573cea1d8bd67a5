// SPDX-License-Identifier: Apache-2.0
#include "ufc/student/student.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ufc/nn/losses.hpp"
#include "ufc/nn/optim.hpp"

namespace ufc::student {

TrainingSet integrate(const distill::DistilledDataset& bundle) {
  bundle.validate();
  const std::size_t C = bundle.C, M = bundle.M, d = bundle.dim;
  const std::size_t n = bundle.integrated_size();
  TrainingSet out;
  out.instances = Tensor::zeros({n, d});
  out.labels = Tensor::zeros({n, C});
  out.origins.reserve(n);
  std::size_t row = 0;
  for (std::size_t k = 0; k < bundle.K(); ++k) {
    const auto& s = bundle.subsets[k];
    for (std::size_t i = 0; i < C; ++i) {
      const auto x = s.anchors.instances.row(i);
      for (std::size_t j = 0; j < M; ++j, ++row) {
        const auto& u = s.compensators[j].u;
        auto dst = out.instances.row(row);
        for (std::size_t t = 0; t < d; ++t) dst[t] = x[t] + u[t];
        const auto y = s.static_labels.row(i * M + j);
        std::copy(y.begin(), y.end(), out.labels.row(row).begin());
        out.origins.push_back({k, i, j});
      }
    }
  }
  return out;
}

double sample_gamma(double shape, Rng& rng) {
  if (!(shape > 0.0)) throw ContractError("sample_gamma: shape must be positive");
  if (shape < 1.0) {
    // Boost: Gamma(a) = Gamma(a + 1) * U^(1/a).
    const double u = 1.0 - uniform01(rng);
    return sample_gamma(shape + 1.0, rng) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal01(rng);
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = 1.0 - uniform01(rng);
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

double sample_beta(double a, double b, Rng& rng) {
  const double x = sample_gamma(a, rng);
  const double y = sample_gamma(b, rng);
  return x / (x + y);
}

MixupBatch mixup_with(const Tensor& inputs, const Tensor& labels, std::span<const std::size_t> partner, double lambda) {
  const std::size_t n = inputs.dim(0);
  if (labels.dim(0) != n || partner.size() != n) throw DimensionError("mixup: batch, label and partner sizes differ");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ContractError("mixup: lambda outside [0, 1]");
  MixupBatch out;
  out.lambda = std::max(lambda, 1.0 - lambda);
  out.partner.assign(partner.begin(), partner.end());
  const double l = out.lambda, r = 1.0 - out.lambda;
  auto blend = [&](const Tensor& src) {
    Tensor dst = Tensor::zeros(src.shape());
    const std::size_t w = src.dim(1);
    for (std::size_t a = 0; a < n; ++a) {
      const std::size_t b = partner[a];
      if (b >= n) throw ContractError("mixup: partner index out of range");
      for (std::size_t c = 0; c < w; ++c)
        dst.at(a, c) = static_cast<float>(l * static_cast<double>(src.at(a, c)) + r * static_cast<double>(src.at(b, c)));
    }
    return dst;
  };
  out.inputs = blend(inputs);
  out.labels = blend(labels);
  return out;
}

MixupBatch mixup(const Tensor& inputs, const Tensor& labels, double beta, Rng& rng) {
  if (inputs.dim(0) < 2) throw ContractError("mixup: batch size must be >= 2");
  if (!(beta > 0.0)) throw ContractError("mixup: beta must be positive");
  const auto partner = permutation(inputs.dim(0), rng);
  const double lambda = sample_beta(beta, beta, rng);
  return mixup_with(inputs, labels, partner, lambda);
}

std::size_t dynamic_epochs(std::size_t epochs, std::size_t ensemble_size) {
  if (ensemble_size == 0) throw ContractError("dynamic_epochs: empty ensemble");
  return (epochs + ensemble_size - 1) / ensemble_size;
}

namespace {

Tensor gather_rows(const Tensor& src, std::span<const std::size_t> rows) {
  const std::size_t w = src.dim(1);
  std::vector<float> v;
  v.reserve(rows.size() * w);
  for (std::size_t r : rows) {
    const auto row = src.row(r);
    v.insert(v.end(), row.begin(), row.end());
  }
  return Tensor({rows.size(), w}, std::move(v));
}

}  // namespace

StudentResult train_student(const TrainingSet& set, const nn::ModelSpec& spec, const StudentRecipe& recipe,
                            LabelMode mode, const distill::Ensemble* ensemble, const data::LabeledDataset* test) {
  if (mode == LabelMode::Dynamic && (ensemble == nullptr || ensemble->size() == 0)) {
    throw ContractError("train_student: dynamic labels need a teacher ensemble");
  }
  if (set.instances.rank() != 2 || set.instances.dim(0) != set.size() || set.labels.dim(0) != set.size()) {
    throw DimensionError("train_student: training set rows disagree");
  }
  if (set.size() > 0 && (set.instances.dim(1) != spec.input_dim || set.labels.dim(1) != spec.class_count)) {
    throw DimensionError("train_student: training set does not match student spec");
  }

  StudentResult out;
  out.model = nn::Model::initialized(spec, mix_seed(recipe.seed, 0x57d + static_cast<std::uint64_t>(spec.architecture)));
  if (set.size() > 0) {
    const auto stats = data::input_statistics(set.instances);
    if (stats.std > 0.0f) out.model.set_input_normalization(stats.mean, stats.std);
  }
  out.epochs_run = mode == LabelMode::Dynamic ? dynamic_epochs(recipe.epochs, ensemble->size()) : recipe.epochs;

  const std::size_t n = set.size();
  const std::size_t steps_per_epoch = nn::make_batches(std::vector<std::size_t>(n), recipe.batch_size).size();
  const nn::CosineSchedule schedule{recipe.lr, out.epochs_run * steps_per_epoch};
  nn::Adam opt({recipe.beta1, recipe.beta2, 1e-8, recipe.weight_decay, true});
  Rng order_rng = make_rng(recipe.seed, 0x04de);
  Rng mix_rng = make_rng(recipe.seed, 0x3175);

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < out.epochs_run; ++epoch) {
    const auto order = permutation(n, order_rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (const auto& batch : nn::make_batches(order, recipe.batch_size)) {
      Tensor xb = gather_rows(set.instances, batch);
      Tensor yb = gather_rows(set.labels, batch);
      if (recipe.use_mixup) {
        MixupBatch mixed = recipe.fixed_lambda
                               ? mixup_with(xb, yb, permutation(batch.size(), mix_rng), *recipe.fixed_lambda)
                               : mixup(xb, yb, recipe.mixup_beta, mix_rng);
        xb = std::move(mixed.inputs);
        yb = std::move(mixed.labels);
      }
      if (mode == LabelMode::Dynamic) yb = ensemble->relabel(xb);

      diffcore::Tape<float> tape;
      const auto params = nn::bind<float>(tape, out.model, true);
      const auto trace = nn::forward(out.model, params, tape.constant(xb), nn::Mode::Train);
      const auto loss = nn::kl_loss(yb, trace.logits);
      const auto grads = diffcore::backward(tape, loss);
      std::vector<Tensor> g;
      for (const auto& v : params.flat()) g.push_back(grads[v]);
      nn::update_running_stats(out.model, trace);
      const auto trainable = out.model.trainable();
      opt.step(trainable, g, schedule.at(step++));
      const float l = loss.value().item();
      out.batch_losses.push_back(l);
      loss_sum += l;
      ++batches;
    }
    nn::EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
    rec.test_top1 = test ? evaluate(out.model, *test) : std::numeric_limits<double>::quiet_NaN();
    out.trace.push_back(rec);
  }
  return out;
}

double evaluate(const nn::Model& model, const data::LabeledDataset& test) {
  return nn::top1_accuracy(model, test.instances, test.labels);
}

}  // namespace ufc::student
