// SPDX-License-Identifier: Apache-2.0
#include "ufc/nn/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include "ufc/util/hash.hpp"
#include "ufc/util/rng.hpp"

namespace ufc::nn {

const std::vector<std::size_t>& hidden_widths(ArchitectureId id) {
  static const std::vector<std::size_t> a1{64, 64}, a2{128}, a3{96, 48, 24}, a4{32, 32, 32};
  switch (id) {
    case ArchitectureId::A1: return a1;
    case ArchitectureId::A2: return a2;
    case ArchitectureId::A3: return a3;
    case ArchitectureId::A4: return a4;
  }
  throw ContractError("unknown architecture id");
}

std::string to_string(ArchitectureId id) {
  switch (id) {
    case ArchitectureId::A1: return "A1";
    case ArchitectureId::A2: return "A2";
    case ArchitectureId::A3: return "A3";
    case ArchitectureId::A4: return "A4";
  }
  return "?";
}

ArchitectureId parse_architecture(std::string_view name) {
  if (name == "A1") return ArchitectureId::A1;
  if (name == "A2") return ArchitectureId::A2;
  if (name == "A3") return ArchitectureId::A3;
  if (name == "A4") return ArchitectureId::A4;
  throw ConfigError("unknown architecture '" + std::string(name) + "' (expected A1..A4)");
}

BatchNormState BatchNormState::identity(std::size_t features) {
  BatchNormState s;
  s.gamma = Tensor::full({features}, 1.0f);
  s.beta = Tensor::zeros({features});
  s.running_mean = Tensor::zeros({features});
  s.running_var = Tensor::full({features}, 1.0f);
  return s;
}

Model::Model(ModelSpec spec) : spec_(spec) {
  if (spec.input_dim == 0 || spec.class_count == 0) throw ContractError("model: zero input or class dim");
  std::size_t in = spec.input_dim;
  for (std::size_t w : hidden_widths(spec.architecture)) {
    HiddenLayer layer;
    layer.weight = Tensor::zeros({in, w});
    layer.bn = BatchNormState::identity(w);
    layer.bn.gamma = Tensor::zeros({w});
    hidden_.push_back(std::move(layer));
    in = w;
  }
  head_weight_ = Tensor::zeros({in, spec.class_count});
  head_bias_ = Tensor::zeros({spec.class_count});
}

Model Model::initialized(ModelSpec spec, std::uint64_t seed) {
  Model m(spec);
  Rng rng = make_rng(seed, 0x1417);
  for (auto& layer : m.hidden_) {
    const auto fan_in = static_cast<double>(layer.weight.dim(0));
    const double sd = std::sqrt(2.0 / fan_in);
    for (float& w : layer.weight.vec()) w = static_cast<float>(sd * normal01(rng));
    layer.bn.gamma = Tensor::full({layer.bn.features()}, 1.0f);
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(m.head_weight_.dim(0)));
  for (float& w : m.head_weight_.vec()) w = static_cast<float>(bound * (2.0 * uniform01(rng) - 1.0));
  return m;
}

void Model::set_input_normalization(float mean, float std) {
  if (!(std > 0.0f)) throw ContractError("input std must be positive");
  input_mean_ = mean;
  input_std_ = std;
}

std::vector<Tensor*> Model::trainable() {
  std::vector<Tensor*> out;
  for (auto& l : hidden_) {
    out.push_back(&l.weight);
    out.push_back(&l.bn.gamma);
    out.push_back(&l.bn.beta);
  }
  out.push_back(&head_weight_);
  out.push_back(&head_bias_);
  return out;
}

std::vector<const Tensor*> Model::trainable() const {
  auto mut = const_cast<Model*>(this)->trainable();
  return {mut.begin(), mut.end()};
}

std::vector<std::pair<std::string, Tensor*>> Model::named_tensors() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (std::size_t l = 0; l < hidden_.size(); ++l) {
    const std::string p = "hidden" + std::to_string(l);
    out.emplace_back(p + ".weight", &hidden_[l].weight);
    out.emplace_back(p + ".bn.gamma", &hidden_[l].bn.gamma);
    out.emplace_back(p + ".bn.beta", &hidden_[l].bn.beta);
    out.emplace_back(p + ".bn.running_mean", &hidden_[l].bn.running_mean);
    out.emplace_back(p + ".bn.running_var", &hidden_[l].bn.running_var);
  }
  out.emplace_back("head.weight", &head_weight_);
  out.emplace_back("head.bias", &head_bias_);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> Model::named_tensors() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& [name, t] : const_cast<Model*>(this)->named_tensors()) out.emplace_back(name, t);
  return out;
}

std::size_t Model::feature_dim() const { return hidden_.empty() ? spec_.input_dim : hidden_.back().weight.dim(1); }

std::uint64_t state_hash(const Model& model) {
  std::string bytes;
  auto put = [&](float v) {
    const auto u = std::bit_cast<std::uint32_t>(v);
    bytes.append(reinterpret_cast<const char*>(&u), sizeof u);
  };
  put(model.input_mean());
  put(model.input_std());
  for (const auto& [name, t] : model.named_tensors()) {
    bytes += name;
    for (float v : t->data()) put(v);
  }
  for (const auto& l : model.hidden()) {
    put(l.bn.momentum);
    put(l.bn.eps);
  }
  return fnv1a64(bytes);
}

namespace {

void blend_running(BatchNormState& s, const Tensor& batch_mean, const Tensor& batch_var) {
  const float m = s.momentum;
  for (std::size_t i = 0; i < s.features(); ++i) {
    s.running_mean[i] = (1.0f - m) * s.running_mean[i] + m * batch_mean[i];
    s.running_var[i] = (1.0f - m) * s.running_var[i] + m * batch_var[i];
  }
}

}  // namespace

void update_running_stats(Model& model, const ForwardTrace<float>& trace) {
  if (trace.bn.size() != model.hidden().size()) throw ContractError("update_running_stats: trace/model mismatch");
  for (std::size_t l = 0; l < trace.bn.size(); ++l) {
    if (!trace.bn[l].batch_mean.valid()) throw ContractError("update_running_stats: eval-mode trace");
    blend_running(model.hidden()[l].bn, trace.bn[l].batch_mean.value(), trace.bn[l].batch_var.value());
  }
}

Tensor bn_forward(const Tensor& x, BatchNormState& state, Mode mode) {
  Tape<float> tape;
  auto r = bn_forward(tape.constant(x), tape.constant(state.gamma), tape.constant(state.beta), state, mode);
  if (mode == Mode::Train) blend_running(state, r.batch_mean.value(), r.batch_var.value());
  return r.out.value();
}

Tensor forward_logits(const Model& model, const Tensor& batch) {
  Tape<float> tape;
  const auto params = bind<float>(tape, model, false);
  return forward(model, params, tape.constant(batch), Mode::Eval).logits.value();
}

Tensor penultimate_features(const Model& model, const Tensor& batch) {
  Tape<float> tape;
  const auto params = bind<float>(tape, model, false);
  return forward(model, params, tape.constant(batch), Mode::Eval).features.value();
}

}  // namespace ufc::nn
