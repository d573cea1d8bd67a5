// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "ufc/diffcore/tensor.hpp"

namespace ufc::nn {

using diffcore::Tensor;

/// lr(t) = base * (1 + cos(pi * t / total)) / 2; constant when total == 0.
struct CosineSchedule {
  double base_lr = 0.0;
  std::size_t total_steps = 0;

  double at(std::size_t step) const {
    if (total_steps == 0) return base_lr;
    constexpr double kPi = 3.141592653589793;
    return base_lr * 0.5 * (1.0 + std::cos(kPi * static_cast<double>(step) / static_cast<double>(total_steps)));
  }
};

/// Heavy-ball SGD (v = mu v + g + wd p; p -= lr v).
class Sgd {
 public:
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}
  void step(std::span<Tensor* const> params, std::span<const Tensor> grads, double lr);

 private:
  double momentum_;
  double weight_decay_;
  std::vector<std::vector<float>> velocity_;
};

/// Adam; with decoupled_weight_decay it is AdamW (p -= lr wd p before the moment step).
class Adam {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    bool decoupled_weight_decay = false;
  };

  explicit Adam(Options options) : opt_(options) {}
  void step(std::span<Tensor* const> params, std::span<const Tensor> grads, double lr);
  std::size_t steps_taken() const noexcept { return t_; }

 private:
  Options opt_;
  std::size_t t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

}  // namespace ufc::nn
