// SPDX-License-Identifier: Apache-2.0
//
// Synthesis objective shared by compensator optimization and the
// class-specific baseline:
//
//   J(S) = sum_i CE(f(s_i), y_i) + alpha * sum_i L_BN(f, S)
//        = sum_i CE(f(s_i), y_i) + alpha * |S| * L_BN(f, S)
//
// where L_BN(f, S) = sum_l ||mu_l(S) - mu_l(T)||_2 + ||var_l(S) - var_l(T)||_2,
// with batch statistics taken at the input of every BN layer of a teacher
// running in eval mode (normalization by its running statistics).
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ufc/data/dataset.hpp"
#include "ufc/diffcore/tape.hpp"
#include "ufc/nn/losses.hpp"
#include "ufc/nn/model.hpp"

namespace ufc::distill {

using diffcore::BasicTensor;
using diffcore::Tape;
using diffcore::Tensor;
using diffcore::Var;

template <class T>
Var<T> bn_alignment_loss(const nn::Model& model, const nn::ForwardTrace<T>& trace) {
  using namespace diffcore;
  if (trace.bn_inputs.size() != model.hidden().size()) throw ContractError("bn_alignment_loss: trace/model mismatch");
  if (trace.bn_inputs.empty()) throw ContractError("bn_alignment_loss: model has no BN layers");
  Var<T> total;
  for (std::size_t l = 0; l < trace.bn_inputs.size(); ++l) {
    const Var<T>& pre = trace.bn_inputs[l];
    if (pre.shape()[0] < 2) throw ContractError("bn_alignment_loss: batch size must be >= 2");
    Tape<T>& tape = pre.tape();
    const auto& bn = model.hidden()[l].bn;
    Var<T> dm = l2norm(sub(mean_axis(pre, 0), tape.constant(bn.running_mean.cast<T>())));
    Var<T> dv = l2norm(sub(variance(pre, 0), tape.constant(bn.running_var.cast<T>())));
    Var<T> layer = add(dm, dv);
    total = total.valid() ? add(total, layer) : layer;
  }
  return total;
}

template <class T>
struct ObjectiveTerms {
  Var<T> total;
  Var<T> ce_sum;
  Var<T> bn;
  Var<T> logits;
};

/// J for a batch `s` (rows = instances) against a frozen teacher.
template <class T>
ObjectiveTerms<T> synthesis_objective(const nn::Model& teacher, const Var<T>& s,
                                      const BasicTensor<T>& targets, double alpha) {
  using namespace diffcore;
  Tape<T>& tape = s.tape();
  const auto params = nn::bind<T>(tape, teacher, false);
  const auto trace = nn::forward(teacher, params, s, nn::Mode::Eval);
  ObjectiveTerms<T> out;
  out.logits = trace.logits;
  out.ce_sum = nn::cross_entropy_sum(trace.logits, targets);
  out.bn = bn_alignment_loss(teacher, trace);
  const auto n = static_cast<T>(s.shape()[0]);
  out.total = add(out.ce_sum, scale(out.bn, static_cast<T>(alpha) * n));
  return out;
}

/// The compensator objective J(anchors + u) as a function of u (shape d).
template <class T>
ObjectiveTerms<T> compensator_objective(const nn::Model& teacher, const BasicTensor<T>& anchors,
                                        const BasicTensor<T>& one_hot, const Var<T>& u, double alpha) {
  Tape<T>& tape = u.tape();
  const Var<T> s = diffcore::broadcast_add(tape.constant(anchors), u);
  return synthesis_objective(teacher, s, one_hot, alpha);
}

/// Rows of a 2-D tensor in lexicographic order.
Tensor sort_rows(const Tensor& batch);

/// Plain-value BN alignment loss of `batch` under `model`. Exactly invariant
/// to the order of the rows.
double bn_alignment_loss(const nn::Model& model, const Tensor& batch);

/// Adam settings for synthesis; defaults follow the small-image recipe.
struct SynthesisRecipe {
  std::size_t iterations = 1000;
  double lr = 0.25;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double eps = 1e-8;
};

/// One Universal Feature Compensator: an additive tensor shared by all anchors of a subset.
struct UFC {
  Tensor u;
  nn::ArchitectureId optimized_against = nn::ArchitectureId::A1;
  float initial_objective = 0.0f;
  float final_objective = 0.0f;
  std::vector<float> objective_trace;  // J at every visited iterate, including the last
};

/// Minimizes J(anchors + u) over u from u = 0 with cosine-decayed Adam and
/// returns the best iterate seen. DivergenceError on a non-finite objective.
UFC optimize_ufc(const nn::Model& teacher, const data::AnchorSet& anchors, double alpha,
                 const SynthesisRecipe& recipe);

}  // namespace ufc::distill
