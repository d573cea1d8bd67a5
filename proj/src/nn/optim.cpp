// SPDX-License-Identifier: Apache-2.0
#include "ufc/nn/optim.hpp"

#include "ufc/errors.hpp"

namespace ufc::nn {

namespace {

void check_pairing(std::span<Tensor* const> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size()) throw ContractError("optimizer: params/grads count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i]->size() != grads[i].size()) throw DimensionError("optimizer: gradient shape mismatch");
}

void lazy_init(std::vector<std::vector<float>>& buf, std::span<Tensor* const> params) {
  if (!buf.empty()) return;
  for (const Tensor* p : params) buf.emplace_back(p->size(), 0.0f);
}

}  // namespace

void Sgd::step(std::span<Tensor* const> params, std::span<const Tensor> grads, double lr) {
  check_pairing(params, grads);
  lazy_init(velocity_, params);
  const auto mu = static_cast<float>(momentum_);
  const auto wd = static_cast<float>(weight_decay_);
  const auto rate = static_cast<float>(lr);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k]->data();
    auto& v = velocity_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = mu * v[i] + grads[k][i] + wd * p[i];
      p[i] -= rate * v[i];
    }
  }
}

void Adam::step(std::span<Tensor* const> params, std::span<const Tensor> grads, double lr) {
  check_pairing(params, grads);
  lazy_init(m_, params);
  lazy_init(v_, params);
  ++t_;
  const auto b1 = static_cast<float>(opt_.beta1);
  const auto b2 = static_cast<float>(opt_.beta2);
  const auto bc1 = static_cast<float>(1.0 - std::pow(opt_.beta1, static_cast<double>(t_)));
  const auto bc2 = static_cast<float>(1.0 - std::pow(opt_.beta2, static_cast<double>(t_)));
  const auto eps = static_cast<float>(opt_.eps);
  const auto rate = static_cast<float>(lr);
  const auto wd = static_cast<float>(opt_.weight_decay);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k]->data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      float g = grads[k][i];
      if (opt_.decoupled_weight_decay) {
        p[i] -= rate * wd * p[i];
      } else {
        g += wd * p[i];
      }
      m[i] = b1 * m[i] + (1.0f - b1) * g;
      v[i] = b2 * v[i] + (1.0f - b2) * g * g;
      const float mhat = m[i] / bc1;
      const float vhat = v[i] / bc2;
      p[i] -= rate * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace ufc::nn
