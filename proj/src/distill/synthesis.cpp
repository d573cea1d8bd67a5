// SPDX-License-Identifier: Apache-2.0
#include "ufc/distill/synthesis.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "ufc/nn/optim.hpp"

namespace ufc::distill {

Tensor sort_rows(const Tensor& batch) {
  if (batch.rank() != 2 || batch.dim(0) < 2) return batch;
  std::vector<std::size_t> order(batch.dim(0));
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto ra = batch.row(a), rb = batch.row(b);
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  });
  Tensor sorted = batch;
  for (std::size_t r = 0; r < order.size(); ++r) {
    const auto src = batch.row(order[r]);
    std::copy(src.begin(), src.end(), sorted.row(r).begin());
  }
  return sorted;
}

double bn_alignment_loss(const nn::Model& model, const Tensor& batch) {
  // Sorting first fixes the float summation order, whatever order the rows came in.
  const Tensor sorted = sort_rows(batch);
  Tape<float> tape;
  const auto params = nn::bind<float>(tape, model, false);
  const auto trace = nn::forward(model, params, tape.constant(sorted), nn::Mode::Eval);
  return bn_alignment_loss(model, trace).value().item();
}

namespace {

Tensor one_hot_rows(std::span<const std::int32_t> labels, std::size_t classes) {
  Tensor t = Tensor::zeros({labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) t.at(i, static_cast<std::size_t>(labels[i])) = 1.0f;
  return t;
}

}  // namespace

UFC optimize_ufc(const nn::Model& teacher, const data::AnchorSet& anchors, double alpha,
                 const SynthesisRecipe& recipe) {
  const std::size_t d = anchors.instances.dim(1);
  if (d != teacher.spec().input_dim) throw ContractError("optimize_ufc: anchor dim does not match teacher");
  const Tensor targets = one_hot_rows(anchors.labels, teacher.spec().class_count);

  UFC out;
  out.optimized_against = teacher.spec().architecture;
  Tensor u = Tensor::zeros({d});
  Tensor best = u;
  float best_obj = std::numeric_limits<float>::infinity();

  nn::Adam adam({recipe.beta1, recipe.beta2, recipe.eps, 0.0, false});
  const nn::CosineSchedule schedule{recipe.lr, recipe.iterations};

  for (std::size_t it = 0; it <= recipe.iterations; ++it) {
    Tape<float> tape;
    const Var<float> uv = tape.variable(u);
    float obj = 0.0f;
    Tensor grad;
    try {
      const auto terms = compensator_objective(teacher, anchors.instances, targets, uv, alpha);
      obj = terms.total.value().item();
      if (it < recipe.iterations) grad = diffcore::backward(tape, terms.total)[uv];
    } catch (const NumericError& e) {
      throw DivergenceError(std::string("optimize_ufc: ") + e.what(), it);
    }
    out.objective_trace.push_back(obj);
    if (obj < best_obj) {
      best_obj = obj;
      best = u;
    }
    if (it == recipe.iterations) break;
    Tensor* p = &u;
    adam.step(std::span<Tensor* const>(&p, 1), std::span<const Tensor>(&grad, 1), schedule.at(it));
    if (!u.all_finite()) throw DivergenceError("optimize_ufc: compensator became non-finite", it);
  }
  out.initial_objective = out.objective_trace.front();
  out.final_objective = best_obj;
  out.u = std::move(best);
  return out;
}

}  // namespace ufc::distill
