// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "ufc/diffcore/tape.hpp"

namespace ufc::diffcore {

/// Compares the float32 reverse-mode gradient of `build` against central
/// differences of the same expression evaluated in double precision.
///
/// `build` is called as build(Tape<T>&, const std::vector<Var<T>>&) for both
/// T = float (analytic pass) and T = double (difference quotients), and must
/// return a scalar Var. Returns the max over all coordinates of
/// |analytic - central| / max(1, |central|).
template <class Build>
double finite_diff_check(Build&& build, const std::vector<Tensor>& params, double step) {
  if (!(step > 0.0)) throw ContractError("finite_diff_check: step must be positive");

  Tape<float> tape;
  std::vector<Var<float>> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(tape.variable(p));
  const Var<float> loss = build(tape, vars);
  const Gradients<float> grads = backward(tape, loss);

  std::vector<BasicTensor<double>> base;
  base.reserve(params.size());
  for (const auto& p : params) base.push_back(p.cast<double>());

  auto eval = [&](std::size_t which, std::size_t index, double delta) {
    Tape<double> t;
    std::vector<Var<double>> v;
    v.reserve(base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
      BasicTensor<double> value = base[i];
      if (i == which) value[index] += delta;
      v.push_back(t.constant(std::move(value)));
    }
    return build(t, v).value().item();
  };

  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const auto& g = grads[vars[p]];
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double central = (eval(p, i, step) - eval(p, i, -step)) / (2.0 * step);
      const double err = std::abs(static_cast<double>(g[i]) - central) / std::max(1.0, std::abs(central));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace ufc::diffcore
