// SPDX-License-Identifier: Apache-2.0
//
// Small MLP classifiers with batch normalization after every hidden affine
// layer:  x -> (x - m) / s -> [Linear -> BN -> ReLU] x depth -> Linear -> logits.
//
// The forward pass is templated on the scalar type so the same expression can
// be evaluated in double by the finite-difference oracle; stored parameters are
// always float.
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ufc/diffcore/tape.hpp"

namespace ufc::nn {

using diffcore::BasicTensor;
using diffcore::Tape;
using diffcore::Tensor;
using diffcore::Var;

enum class ArchitectureId { A1, A2, A3, A4 };

/// Hidden widths: A1 (64,64), A2 (128), A3 (96,48,24), A4 (32,32,32).
const std::vector<std::size_t>& hidden_widths(ArchitectureId id);
std::string to_string(ArchitectureId id);
ArchitectureId parse_architecture(std::string_view name);

struct ModelSpec {
  ArchitectureId architecture = ArchitectureId::A1;
  std::size_t input_dim = 0;
  std::size_t class_count = 0;
};

enum class Mode { Train, Eval };

struct BatchNormState {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  float momentum = 0.1f;
  float eps = 1e-5f;

  /// gamma = 1, beta = 0, running stats (0, 1).
  static BatchNormState identity(std::size_t features);
  std::size_t features() const noexcept { return gamma.size(); }
};

struct HiddenLayer {
  Tensor weight;  // in x out, no bias (BN follows)
  BatchNormState bn;
};

class Model {
 public:
  Model() = default;
  /// All parameters zero, BN running stats (0, 1), identity input normalization.
  explicit Model(ModelSpec spec);
  /// He-normal hidden weights, uniform(+-1/sqrt(fan_in)) head, zero head bias.
  static Model initialized(ModelSpec spec, std::uint64_t seed);

  const ModelSpec& spec() const noexcept { return spec_; }
  std::vector<HiddenLayer>& hidden() noexcept { return hidden_; }
  const std::vector<HiddenLayer>& hidden() const noexcept { return hidden_; }
  Tensor& head_weight() noexcept { return head_weight_; }
  const Tensor& head_weight() const noexcept { return head_weight_; }
  Tensor& head_bias() noexcept { return head_bias_; }
  const Tensor& head_bias() const noexcept { return head_bias_; }

  float input_mean() const noexcept { return input_mean_; }
  float input_std() const noexcept { return input_std_; }
  void set_input_normalization(float mean, float std);

  /// Trainable tensors in canonical order: per layer (weight, gamma, beta), then head weight, bias.
  std::vector<Tensor*> trainable();
  std::vector<const Tensor*> trainable() const;

  /// Every stored tensor (trainable + running stats) with its serialized name.
  std::vector<std::pair<std::string, const Tensor*>> named_tensors() const;
  std::vector<std::pair<std::string, Tensor*>> named_tensors();

  std::size_t feature_dim() const;

 private:
  ModelSpec spec_;
  float input_mean_ = 0.0f;
  float input_std_ = 1.0f;
  std::vector<HiddenLayer> hidden_;
  Tensor head_weight_;
  Tensor head_bias_;
};

/// FNV hash over every stored tensor's bytes and the normalization constants.
std::uint64_t state_hash(const Model& model);

// ---------------------------------------------------------------------------

template <class T>
struct LayerVars {
  Var<T> weight, gamma, beta;
};

template <class T>
struct ModelVars {
  std::vector<LayerVars<T>> hidden;
  Var<T> head_weight, head_bias;

  std::vector<Var<T>> flat() const {
    std::vector<Var<T>> out;
    for (const auto& l : hidden) {
      out.push_back(l.weight);
      out.push_back(l.gamma);
      out.push_back(l.beta);
    }
    out.push_back(head_weight);
    out.push_back(head_bias);
    return out;
  }
};

/// Rebuilds the structured view from a flat list in trainable() order.
template <class T>
ModelVars<T> unflatten(const std::vector<Var<T>>& flat, std::size_t depth) {
  if (flat.size() != 3 * depth + 2) throw ContractError("unflatten: wrong parameter count");
  ModelVars<T> v;
  for (std::size_t l = 0; l < depth; ++l) v.hidden.push_back({flat[3 * l], flat[3 * l + 1], flat[3 * l + 2]});
  v.head_weight = flat[3 * depth];
  v.head_bias = flat[3 * depth + 1];
  return v;
}

/// Places the model's trainable parameters on `tape`, as variables or constants.
template <class T>
ModelVars<T> bind(Tape<T>& tape, const Model& model, bool requires_grad) {
  std::vector<Var<T>> flat;
  for (const Tensor* t : model.trainable()) {
    BasicTensor<T> v = t->cast<T>();
    flat.push_back(requires_grad ? tape.variable(std::move(v)) : tape.constant(std::move(v)));
  }
  return unflatten(flat, model.hidden().size());
}

template <class T>
struct BnResult {
  Var<T> out;
  Var<T> batch_mean;  // valid in train mode
  Var<T> batch_var;
};

/// Train mode normalizes by batch statistics (biased variance); eval mode by
/// the running statistics in `state`. Running stats are not mutated here; see
/// update_running_stats().
template <class T>
BnResult<T> bn_forward(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                       const BatchNormState& state, Mode mode) {
  using namespace diffcore;
  Tape<T>& tape = x.tape();
  if (x.value().rank() != 2 || x.shape()[1] != state.features()) {
    throw DimensionError("bn_forward: input " + shape_str(x.shape()) + " for " +
                         std::to_string(state.features()) + " features");
  }
  BnResult<T> r;
  Var<T> centered, denom;
  if (mode == Mode::Train) {
    if (x.shape()[0] < 2) throw ContractError("bn_forward: train mode needs batch size >= 2");
    r.batch_mean = mean_axis(x, 0);
    r.batch_var = variance(x, 0);
    centered = sub(x, r.batch_mean);
    denom = sqrt(add_scalar(r.batch_var, static_cast<T>(state.eps)));
  } else {
    centered = sub(x, tape.constant(state.running_mean.cast<T>()));
    BasicTensor<T> sd = state.running_var.cast<T>();
    for (auto& v : sd.vec()) v = std::sqrt(v + static_cast<T>(state.eps));
    denom = tape.constant(std::move(sd));
  }
  r.out = broadcast_add(mul(div(centered, denom), gamma), beta);
  return r;
}

template <class T>
struct ForwardTrace {
  Var<T> logits;
  Var<T> features;                  // last hidden activations (penultimate layer)
  std::vector<Var<T>> bn_inputs;    // pre-normalization activations per BN layer
  std::vector<BnResult<T>> bn;
};

template <class T>
ForwardTrace<T> forward(const Model& model, const ModelVars<T>& params, const Var<T>& x, Mode mode) {
  using namespace diffcore;
  const auto& spec = model.spec();
  if (x.value().rank() != 2 || x.shape()[1] != spec.input_dim) {
    throw ContractError("forward: batch " + shape_str(x.shape()) + " for input dim " +
                        std::to_string(spec.input_dim));
  }
  ForwardTrace<T> trace;
  Var<T> h = scale(add_scalar(x, static_cast<T>(-model.input_mean())),
                   static_cast<T>(1.0f / model.input_std()));
  for (std::size_t l = 0; l < model.hidden().size(); ++l) {
    const auto& pv = params.hidden[l];
    Var<T> pre = matmul(h, pv.weight);
    trace.bn_inputs.push_back(pre);
    auto bn = bn_forward(pre, pv.gamma, pv.beta, model.hidden()[l].bn, mode);
    trace.bn.push_back(bn);
    h = relu(bn.out);
  }
  trace.features = h;
  trace.logits = broadcast_add(matmul(h, params.head_weight), params.head_bias);
  return trace;
}

/// r <- (1 - momentum) r + momentum * batch_stat for every BN layer of a train-mode trace.
void update_running_stats(Model& model, const ForwardTrace<float>& trace);

/// Applies one BN layer to a plain batch; train mode updates `state`'s running stats.
Tensor bn_forward(const Tensor& x, BatchNormState& state, Mode mode);

/// Eval-mode logits, shape (batch, C). Never mutates the model.
Tensor forward_logits(const Model& model, const Tensor& batch);

/// Eval-mode penultimate activations, shape (batch, last hidden width).
Tensor penultimate_features(const Model& model, const Tensor& batch);

}  // namespace ufc::nn
