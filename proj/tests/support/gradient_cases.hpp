// SPDX-License-Identifier: Apache-2.0
//
// Randomized finite-difference cases shared by the unit and acceptance tests.
// Case i cycles through every primitive, both BN modes, a full model forward,
// both losses, the BN alignment loss and the compensator objective.
#pragma once

#include <cstdint>
#include <string>
#include <type_traits>
#include <vector>

#include "ufc/diffcore/gradcheck.hpp"
#include "ufc/distill/synthesis.hpp"
#include "ufc/nn/losses.hpp"
#include "ufc/nn/model.hpp"
#include "ufc/util/rng.hpp"

namespace ufc::test {

using diffcore::OpAttrs;
using diffcore::OpId;
using diffcore::Shape;
using diffcore::Tensor;

struct GradCaseResult {
  std::string name;
  double error = 0.0;
};

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (float& v : t.vec()) v = static_cast<float>(lo + (hi - lo) * uniform01(rng));
  return t;
}

/// Values with |v| in [0.2, 1], kept away from the ReLU kink.
inline Tensor away_from_zero(Shape shape, Rng& rng) {
  Tensor t = random_tensor(std::move(shape), rng, 0.2, 1.0);
  for (float& v : t.vec())
    if (uniform01(rng) < 0.5) v = -v;
  return t;
}

inline Tensor one_hot_targets(std::size_t rows, std::size_t classes, Rng& rng) {
  Tensor t = Tensor::zeros({rows, classes});
  for (std::size_t r = 0; r < rows; ++r) t.at(r, uniform_index(rng, classes)) = 1.0f;
  return t;
}

inline Tensor soft_targets(std::size_t rows, std::size_t classes, Rng& rng) {
  Tensor t = random_tensor({rows, classes}, rng, 0.05, 1.0);
  for (std::size_t r = 0; r < rows; ++r) {
    float s = 0.0f;
    for (float v : t.row(r)) s += v;
    for (float& v : t.row(r)) v /= s;
  }
  return t;
}

template <class V>
using scalar_of = std::remove_cvref_t<decltype(std::declval<V>().value()[0])>;

/// sum(out * w) for a fixed random w, so every output coordinate gets its own upstream gradient.
template <class T>
diffcore::Var<T> project(const diffcore::Var<T>& out, const Tensor& w) {
  return diffcore::sum(diffcore::mul(out, out.tape().constant(w.cast<T>())));
}

inline double primitive_case(OpId op, Rng& rng, double step) {
  std::vector<Tensor> in;
  OpAttrs attrs;
  switch (op) {
    case OpId::MatMul: in = {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)}; break;
    case OpId::Add:
    case OpId::Mul: in = {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)}; break;
    case OpId::Sub: in = {random_tensor({2, 3}, rng), random_tensor({3}, rng)}; break;
    case OpId::Div: in = {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng, 0.5, 2.0)}; break;
    case OpId::BroadcastAdd: in = {random_tensor({4, 3}, rng), random_tensor({3}, rng)}; break;
    case OpId::Relu: in = {away_from_zero({3, 4}, rng)}; break;
    case OpId::Log:
    case OpId::Sqrt: in = {random_tensor({3, 3}, rng, 0.5, 2.0)}; break;
    case OpId::Scale: attrs.scalar = 2.0 * uniform01(rng) - 1.0; in = {random_tensor({5}, rng)}; break;
    case OpId::AddScalar: attrs.scalar = uniform01(rng); in = {random_tensor({5}, rng)}; break;
    case OpId::SumAxis:
    case OpId::MeanAxis: attrs.axis = uniform_index(rng, 2); in = {random_tensor({3, 4}, rng)}; break;
    case OpId::Variance: attrs.axis = 0; in = {random_tensor({6, 3}, rng)}; break;
    case OpId::Softmax:
    case OpId::LogSoftmax: in = {random_tensor({3, 4}, rng, -2.0, 2.0)}; break;
    case OpId::L2Norm: in = {random_tensor({2, 3}, rng, 0.2, 1.0)}; break;
    case OpId::Reshape: attrs.shape = {3, 2}; in = {random_tensor({2, 3}, rng)}; break;
    case OpId::Slice: attrs.begin = 1; attrs.end = 3; in = {random_tensor({4, 2}, rng)}; break;
    case OpId::Concat: in = {random_tensor({2, 3}, rng), random_tensor({1, 3}, rng)}; break;
    default: in = {random_tensor({3, 2}, rng)}; break;  // Square, Sum, Mean
  }
  // The output shape is needed for the projection weights: probe once in float.
  Shape out_shape;
  {
    diffcore::Tape<float> t;
    std::vector<diffcore::Var<float>> v;
    for (const auto& x : in) v.push_back(t.constant(x));
    out_shape = diffcore::forward_primitive<float>(op, v, attrs).shape();
  }
  const Tensor w = random_tensor(out_shape, rng);
  return diffcore::finite_diff_check(
      [&](auto& tape, const auto& v) {
        using T = scalar_of<decltype(v[0])>;
        (void)tape;
        return project<T>(diffcore::forward_primitive<T>(op, v, attrs), w);
      },
      in, step);
}

inline double model_case(Rng& rng, double step) {
  const auto arch = static_cast<nn::ArchitectureId>(uniform_index(rng, 4));
  const nn::Model model = nn::Model::initialized({arch, 5, 3}, rng());
  const Tensor x = random_tensor({6, 5}, rng, 0.0, 1.0);
  const Tensor y = soft_targets(6, 3, rng);
  std::vector<Tensor> params;
  for (const Tensor* t : model.trainable()) params.push_back(*t);
  const std::size_t depth = model.hidden().size();
  return diffcore::finite_diff_check(
      [&](auto& tape, const auto& v) {
        using T = scalar_of<decltype(v[0])>;
        const auto pv = nn::unflatten(v, depth);
        const auto trace = nn::forward(model, pv, tape.constant(x.cast<T>()), nn::Mode::Train);
        return nn::cross_entropy(trace.logits, y.cast<T>());
      },
      params, step);
}

inline double bn_case(Rng& rng, double step, nn::Mode mode) {
  auto state = nn::BatchNormState::identity(4);
  state.running_mean = random_tensor({4}, rng);
  state.running_var = random_tensor({4}, rng, 0.5, 2.0);
  const std::vector<Tensor> params = {random_tensor({8, 4}, rng), random_tensor({4}, rng, 0.5, 1.5),
                                      random_tensor({4}, rng)};
  const Tensor w = random_tensor({8, 4}, rng);
  return diffcore::finite_diff_check(
      [&](auto&, const auto& v) {
        using T = scalar_of<decltype(v[0])>;
        return project<T>(nn::bn_forward(v[0], v[1], v[2], state, mode).out, w);
      },
      params, step);
}

inline double kl_case(Rng& rng, double step) {
  const Tensor p = soft_targets(4, 5, rng);
  return diffcore::finite_diff_check(
      [&](auto&, const auto& v) {
        using T = scalar_of<decltype(v[0])>;
        return nn::kl_loss(p.cast<T>(), v[0]);
      },
      {random_tensor({4, 5}, rng, -2.0, 2.0)}, step);
}

inline double ce_case(Rng& rng, double step) {
  const Tensor y = one_hot_targets(4, 5, rng);
  return diffcore::finite_diff_check(
      [&](auto&, const auto& v) {
        using T = scalar_of<decltype(v[0])>;
        return nn::cross_entropy(v[0], y.cast<T>());
      },
      {random_tensor({4, 5}, rng, -2.0, 2.0)}, step);
}

/// A teacher with non-trivial running statistics.
inline nn::Model perturbed_teacher(nn::ArchitectureId arch, std::size_t d, std::size_t c, Rng& rng) {
  nn::Model m = nn::Model::initialized({arch, d, c}, rng());
  for (auto& layer : m.hidden()) {
    layer.bn.running_mean = random_tensor({layer.bn.features()}, rng, -0.5, 0.5);
    layer.bn.running_var = random_tensor({layer.bn.features()}, rng, 0.5, 2.0);
    layer.bn.gamma = random_tensor({layer.bn.features()}, rng, 0.5, 1.5);
    layer.bn.beta = random_tensor({layer.bn.features()}, rng, -0.2, 0.2);
  }
  return m;
}

inline double bn_alignment_case(Rng& rng, double step) {
  const nn::Model m = perturbed_teacher(static_cast<nn::ArchitectureId>(uniform_index(rng, 4)), 4, 3, rng);
  return diffcore::finite_diff_check(
      [&](auto& tape, const auto& v) {
        using T = scalar_of<decltype(v[0])>;
        const auto params = nn::bind<T>(tape, m, false);
        return distill::bn_alignment_loss(m, nn::forward(m, params, v[0], nn::Mode::Eval));
      },
      {random_tensor({5, 4}, rng, 0.0, 1.0)}, step);
}

/// The full compensator objective as a function of u on a 2-class anchor set.
inline double objective_case(Rng& rng, double step) {
  const nn::Model m = perturbed_teacher(static_cast<nn::ArchitectureId>(uniform_index(rng, 4)), 6, 2, rng);
  const Tensor anchors = random_tensor({2, 6}, rng, 0.0, 1.0);
  Tensor y = Tensor::zeros({2, 2});
  y.at(0, 0) = 1.0f;
  y.at(1, 1) = 1.0f;
  const double alpha = 0.01 + uniform01(rng);
  return diffcore::finite_diff_check(
      [&](auto&, const auto& v) {
        using T = scalar_of<decltype(v[0])>;
        return distill::compensator_objective<T>(m, anchors.cast<T>(), y.cast<T>(), v[0], alpha).total;
      },
      {random_tensor({6}, rng, -0.3, 0.3)}, step);
}

inline const std::vector<OpId>& primitive_ops() {
  static const std::vector<OpId> ops = {
      OpId::MatMul, OpId::Add,  OpId::Sub,    OpId::Mul,     OpId::Div,     OpId::BroadcastAdd, OpId::Relu,
      OpId::Log,    OpId::Sqrt, OpId::Square, OpId::Scale,   OpId::AddScalar, OpId::Sum,        OpId::Mean,
      OpId::SumAxis, OpId::MeanAxis, OpId::Variance, OpId::Softmax, OpId::LogSoftmax, OpId::L2Norm,
      OpId::Reshape, OpId::Slice, OpId::Concat};
  return ops;
}

inline std::size_t case_kinds() { return primitive_ops().size() + 7; }

/// Central-difference step for cases that pass through hidden ReLUs. A step
/// of 1e-3 regularly straddles a kink somewhere in a 100-unit layer; the
/// quotients are taken in double, so the smaller step costs no accuracy.
inline constexpr double kNetworkStep = 1e-6;

inline GradCaseResult run_gradient_case(std::size_t index, Rng& rng, double step = 1e-3) {
  const auto& ops = primitive_ops();
  const std::size_t kind = index % case_kinds();
  if (kind < ops.size()) return {diffcore::op_name(ops[kind]), primitive_case(ops[kind], rng, step)};
  switch (kind - ops.size()) {
    case 0: return {"bn_train", bn_case(rng, step, nn::Mode::Train)};
    case 1: return {"bn_eval", bn_case(rng, step, nn::Mode::Eval)};
    case 2: return {"model_forward_ce", model_case(rng, kNetworkStep)};
    case 3: return {"cross_entropy", ce_case(rng, step)};
    case 4: return {"kl_loss", kl_case(rng, step)};
    case 5: return {"bn_alignment", bn_alignment_case(rng, kNetworkStep)};
    default: return {"compensator_objective", objective_case(rng, kNetworkStep)};
  }
}

/// `count` cases from one seeded stream.
inline std::vector<GradCaseResult> run_gradient_cases(std::size_t count, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0x6ad);
  std::vector<GradCaseResult> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(run_gradient_case(i, rng));
  return out;
}

}  // namespace ufc::test
