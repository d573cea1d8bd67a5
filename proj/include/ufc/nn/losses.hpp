// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>

#include "ufc/diffcore/tape.hpp"

namespace ufc::nn {

namespace detail {

/// Rows must be non-negative and sum to one (within 1e-4).
template <class T>
void check_distribution_rows(const diffcore::BasicTensor<T>& p, const diffcore::Shape& logits_shape,
                             const char* who) {
  if (p.shape() != logits_shape) {
    throw DimensionError(std::string(who) + ": target " + diffcore::shape_str(p.shape()) +
                         " vs logits " + diffcore::shape_str(logits_shape));
  }
  const std::size_t cols = logits_shape.back();
  for (std::size_t r = 0; cols && r < p.size() / cols; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const T v = p[r * cols + c];
      if (!(v >= T(0))) throw ContractError(std::string(who) + ": negative target entry");
      s += static_cast<double>(v);
    }
    if (std::abs(s - 1.0) > 1e-4) {
      throw ContractError(std::string(who) + ": target row " + std::to_string(r) + " sums to " +
                          std::to_string(s));
    }
  }
}

template <class T>
std::size_t batch_rows(const diffcore::Var<T>& logits) {
  const auto& s = logits.shape();
  return s.size() < 2 ? 1 : s[0];
}

}  // namespace detail

/// Sum over rows of -sum_c target * log softmax(logits).
template <class T>
diffcore::Var<T> cross_entropy_sum(const diffcore::Var<T>& logits, const diffcore::BasicTensor<T>& target) {
  using namespace diffcore;
  detail::check_distribution_rows(target, logits.shape(), "cross_entropy");
  Var<T> t = logits.tape().constant(target);
  return scale(sum(mul(t, log_softmax(logits))), T(-1));
}

/// Batch mean of the per-row cross entropy.
template <class T>
diffcore::Var<T> cross_entropy(const diffcore::Var<T>& logits, const diffcore::BasicTensor<T>& target) {
  const auto rows = static_cast<T>(detail::batch_rows(logits));
  return diffcore::scale(cross_entropy_sum(logits, target), T(1) / rows);
}

/// Batch mean of KL(teacher || softmax(student)); 0 log 0 is taken as 0.
template <class T>
diffcore::Var<T> kl_loss(const diffcore::BasicTensor<T>& teacher_probs, const diffcore::Var<T>& student_logits) {
  using namespace diffcore;
  detail::check_distribution_rows(teacher_probs, student_logits.shape(), "kl_loss");
  T neg_entropy = T(0);
  for (T p : teacher_probs.data())
    if (p > T(0)) neg_entropy += p * std::log(p);
  const auto rows = static_cast<T>(detail::batch_rows(student_logits));
  Var<T> t = student_logits.tape().constant(teacher_probs);
  Var<T> cross = sum(mul(t, log_softmax(student_logits)));
  return scale(add_scalar(scale(cross, T(-1)), neg_entropy), T(1) / rows);
}

}  // namespace ufc::nn
