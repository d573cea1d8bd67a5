// SPDX-License-Identifier: Apache-2.0
//
// Eager reverse-mode tape. Every primitive computes its value immediately and,
// when at least one operand requires a gradient, records an entry holding the
// operand ids and the rule used by backward(). Values that depend on no
// gradient-carrying leaf are stored as constants.
//
// Reductions accumulate sequentially in T in ascending index order, so a given
// tape always produces the same bits.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ufc/diffcore/tensor.hpp"

namespace ufc::diffcore {

enum class OpId : std::uint8_t {
  Leaf,
  Constant,
  MatMul,
  Add,
  Sub,
  Mul,
  Div,
  BroadcastAdd,
  Relu,
  Log,
  Sqrt,
  Square,
  Scale,
  AddScalar,
  Sum,
  Mean,
  SumAxis,
  MeanAxis,
  Variance,
  Softmax,
  LogSoftmax,
  L2Norm,
  Reshape,
  Slice,
  Concat,
};

const char* op_name(OpId op) noexcept;

struct OpAttrs {
  std::size_t axis = 0;
  double scalar = 0.0;
  std::size_t begin = 0;
  std::size_t end = 0;
  Shape shape;
};

template <class T>
struct TapeEntry {
  OpId op = OpId::Constant;
  std::vector<std::size_t> operands;
  BasicTensor<T> value;
  bool requires_grad = false;
  OpAttrs attrs;
};

template <class T>
class Tape;

/// Handle to one tape entry. Cheap to copy; valid while its tape lives.
template <class T>
class Var {
 public:
  Var() = default;

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }
  const BasicTensor<T>& value() const { return tape_->entry(id_).value; }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape_->entry(id_).requires_grad; }

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <class T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf whose gradient is tracked iff value.requires_grad().
  Var<T> leaf(BasicTensor<T> value) {
    TapeEntry<T> e;
    e.op = OpId::Leaf;
    e.requires_grad = value.requires_grad();
    e.value = std::move(value);
    entries_.push_back(std::move(e));
    return Var<T>(this, entries_.size() - 1);
  }

  Var<T> variable(BasicTensor<T> value) {
    value.set_requires_grad(true);
    return leaf(std::move(value));
  }

  Var<T> constant(BasicTensor<T> value) {
    value.set_requires_grad(false);
    TapeEntry<T> e;
    e.op = OpId::Constant;
    e.value = std::move(value);
    entries_.push_back(std::move(e));
    return Var<T>(this, entries_.size() - 1);
  }

  Var<T> record(OpId op, std::vector<std::size_t> operands, BasicTensor<T> value,
                OpAttrs attrs = {}) {
    if (!value.all_finite()) {
      throw NumericError(std::string(op_name(op)) + ": non-finite output");
    }
    bool rg = false;
    for (std::size_t id : operands) rg = rg || entries_.at(id).requires_grad;
    TapeEntry<T> e;
    e.value = std::move(value);
    e.requires_grad = rg;
    if (rg) {
      e.op = op;
      e.operands = std::move(operands);
      e.attrs = std::move(attrs);
    } else {
      e.op = OpId::Constant;
    }
    e.value.set_requires_grad(rg);
    entries_.push_back(std::move(e));
    return Var<T>(this, entries_.size() - 1);
  }

  const TapeEntry<T>& entry(std::size_t id) const { return entries_.at(id); }
  std::size_t size() const noexcept { return entries_.size(); }

  /// Number of entries that carry a backward rule.
  std::size_t recorded_count() const {
    return static_cast<std::size_t>(std::count_if(entries_.begin(), entries_.end(), [](const auto& e) {
      return e.requires_grad && e.op != OpId::Leaf;
    }));
  }

 private:
  std::vector<TapeEntry<T>> entries_;
};

namespace detail {

template <class T>
Tape<T>& common_tape(const Var<T>& a, const Var<T>& b) {
  if (&a.tape() != &b.tape()) throw ContractError("operands belong to different tapes");
  return a.tape();
}

inline Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = da == 1 ? db : da;
  }
  return out;
}

/// Flat input offset for every flat output index of a broadcast.
inline std::vector<std::size_t> broadcast_offsets(const Shape& in, const Shape& out) {
  const std::size_t rank = out.size();
  const std::size_t lead = rank - in.size();
  std::vector<std::size_t> stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t i = rank; i-- > lead;) {
    const std::size_t d = in[i - lead];
    stride[i] = d == 1 ? 0 : s;
    s *= d;
  }
  const std::size_t n = numel(out);
  std::vector<std::size_t> offsets(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t off = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    offsets[flat] = off;
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      off += stride[d];
      if (idx[d] < out[d]) break;
      off -= stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  return offsets;
}

struct AxisSplit {
  std::size_t outer, len, inner;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  }
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

inline Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out = shape;
  out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  return out;
}

enum class Binary { Add, Sub, Mul, Div };

template <class T>
T apply_binary(Binary kind, T x, T y) {
  switch (kind) {
    case Binary::Add: return x + y;
    case Binary::Sub: return x - y;
    case Binary::Mul: return x * y;
    case Binary::Div: return x / y;
  }
  return T(0);
}

template <class T>
Var<T> binary(OpId op, Binary kind, const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = common_tape(a, b);
  const auto& va = a.value();
  const auto& vb = b.value();
  Shape out_shape;
  std::vector<T> out;
  if (va.shape() == vb.shape()) {
    out_shape = va.shape();
    out.resize(va.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = apply_binary(kind, va[i], vb[i]);
  } else {
    out_shape = broadcast_shapes(va.shape(), vb.shape());
    const auto oa = broadcast_offsets(va.shape(), out_shape);
    const auto ob = broadcast_offsets(vb.shape(), out_shape);
    out.resize(oa.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = apply_binary(kind, va[oa[i]], vb[ob[i]]);
  }
  return tape.record(op, {a.id(), b.id()}, BasicTensor<T>(std::move(out_shape), std::move(out)));
}

template <class T, class Fn>
Var<T> unary(OpId op, const Var<T>& x, Fn&& fn, OpAttrs attrs = {}) {
  const auto& vx = x.value();
  std::vector<T> out(vx.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fn(vx[i]);
  return x.tape().record(op, {x.id()}, BasicTensor<T>(vx.shape(), std::move(out)),
                         std::move(attrs));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitives

/// (m,k) x (k,n) -> (m,n).
template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = detail::common_tape(a, b);
  const auto& va = a.value();
  const auto& vb = b.value();
  if (va.rank() != 2 || vb.rank() != 2 || va.dim(1) != vb.dim(0)) {
    throw DimensionError("matmul " + shape_str(va.shape()) + " x " + shape_str(vb.shape()));
  }
  const std::size_t m = va.dim(0), k = va.dim(1), n = vb.dim(1);
  std::vector<T> out(m * n, T(0));
  for (std::size_t i = 0; i < m; ++i) {
    T* orow = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = va[i * k + p];
      const T* brow = vb.data().data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return tape.record(OpId::MatMul, {a.id(), b.id()}, BasicTensor<T>({m, n}, std::move(out)));
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return detail::binary(OpId::Add, detail::Binary::Add, a, b);
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return detail::binary(OpId::Sub, detail::Binary::Sub, a, b);
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return detail::binary(OpId::Mul, detail::Binary::Mul, a, b);
}

template <class T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  return detail::binary(OpId::Div, detail::Binary::Div, a, b);
}

/// x of shape (..., n) plus a row of shape (n).
template <class T>
Var<T> broadcast_add(const Var<T>& x, const Var<T>& row) {
  if (row.value().rank() != 1 || x.value().rank() == 0 || x.shape().back() != row.shape()[0]) {
    throw DimensionError("broadcast_add " + shape_str(x.shape()) + " + " + shape_str(row.shape()));
  }
  return detail::binary(OpId::BroadcastAdd, detail::Binary::Add, x, row);
}

template <class T>
Var<T> relu(const Var<T>& x) {
  return detail::unary(OpId::Relu, x, [](T v) { return v > T(0) ? v : T(0); });
}

template <class T>
Var<T> log(const Var<T>& x) {
  return detail::unary(OpId::Log, x, [](T v) { return std::log(v); });
}

template <class T>
Var<T> sqrt(const Var<T>& x) {
  return detail::unary(OpId::Sqrt, x, [](T v) { return std::sqrt(v); });
}

template <class T>
Var<T> square(const Var<T>& x) {
  return detail::unary(OpId::Square, x, [](T v) { return v * v; });
}

template <class T>
Var<T> scale(const Var<T>& x, T factor) {
  OpAttrs attrs;
  attrs.scalar = static_cast<double>(factor);
  return detail::unary(OpId::Scale, x, [factor](T v) { return v * factor; }, attrs);
}

template <class T>
Var<T> add_scalar(const Var<T>& x, T offset) {
  OpAttrs attrs;
  attrs.scalar = static_cast<double>(offset);
  return detail::unary(OpId::AddScalar, x, [offset](T v) { return v + offset; }, attrs);
}

template <class T>
Var<T> sum(const Var<T>& x) {
  T acc = T(0);
  for (T v : x.value().data()) acc += v;
  return x.tape().record(OpId::Sum, {x.id()}, BasicTensor<T>::scalar(acc));
}

template <class T>
Var<T> mean(const Var<T>& x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw DimensionError("mean of empty tensor");
  T acc = T(0);
  for (T v : x.value().data()) acc += v;
  return x.tape().record(OpId::Mean, {x.id()}, BasicTensor<T>::scalar(acc / static_cast<T>(n)));
}

namespace detail {

template <class T>
std::vector<T> axis_sums(const BasicTensor<T>& v, AxisSplit s) {
  std::vector<T> out(s.outer * s.inner, T(0));
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < s.len; ++k)
      for (std::size_t in = 0; in < s.inner; ++in)
        out[o * s.inner + in] += v[(o * s.len + k) * s.inner + in];
  return out;
}

}  // namespace detail

template <class T>
Var<T> sum_axis(const Var<T>& x, std::size_t axis) {
  const auto s = detail::split_axis(x.shape(), axis);
  OpAttrs attrs;
  attrs.axis = axis;
  return x.tape().record(OpId::SumAxis, {x.id()},
                         BasicTensor<T>(detail::drop_axis(x.shape(), axis),
                                        detail::axis_sums(x.value(), s)),
                         attrs);
}

template <class T>
Var<T> mean_axis(const Var<T>& x, std::size_t axis) {
  const auto s = detail::split_axis(x.shape(), axis);
  if (s.len == 0) throw DimensionError("mean over empty axis");
  auto out = detail::axis_sums(x.value(), s);
  for (T& v : out) v /= static_cast<T>(s.len);
  OpAttrs attrs;
  attrs.axis = axis;
  return x.tape().record(OpId::MeanAxis, {x.id()},
                         BasicTensor<T>(detail::drop_axis(x.shape(), axis), std::move(out)), attrs);
}

/// Biased (population) variance along `axis`.
template <class T>
Var<T> variance(const Var<T>& x, std::size_t axis) {
  const auto s = detail::split_axis(x.shape(), axis);
  if (s.len == 0) throw DimensionError("variance over empty axis");
  const auto& vx = x.value();
  auto mu = detail::axis_sums(vx, s);
  for (T& v : mu) v /= static_cast<T>(s.len);
  std::vector<T> out(mu.size(), T(0));
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < s.len; ++k)
      for (std::size_t in = 0; in < s.inner; ++in) {
        const T d = vx[(o * s.len + k) * s.inner + in] - mu[o * s.inner + in];
        out[o * s.inner + in] += d * d;
      }
  for (T& v : out) v /= static_cast<T>(s.len);
  OpAttrs attrs;
  attrs.axis = axis;
  return x.tape().record(OpId::Variance, {x.id()},
                         BasicTensor<T>(detail::drop_axis(x.shape(), axis), std::move(out)), attrs);
}

namespace detail {

template <class T>
std::vector<T> row_softmax(const BasicTensor<T>& v, bool take_log) {
  if (v.rank() == 0) throw DimensionError("softmax of a scalar");
  const std::size_t cols = v.shape().back();
  const std::size_t rows = cols == 0 ? 0 : v.size() / cols;
  std::vector<T> out(v.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = v.data().data() + r * cols;
    T* o = out.data() + r * cols;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, in[c]);
    T z = T(0);
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(in[c] - mx);
    if (take_log) {
      const T lz = std::log(z);
      for (std::size_t c = 0; c < cols; ++c) o[c] = in[c] - mx - lz;
    } else {
      for (std::size_t c = 0; c < cols; ++c) o[c] = std::exp(in[c] - mx) / z;
    }
  }
  return out;
}

}  // namespace detail

/// Softmax over the last axis.
template <class T>
Var<T> softmax(const Var<T>& x) {
  return x.tape().record(OpId::Softmax, {x.id()},
                         BasicTensor<T>(x.shape(), detail::row_softmax(x.value(), false)));
}

/// log(softmax(x)) over the last axis, computed without forming softmax.
template <class T>
Var<T> log_softmax(const Var<T>& x) {
  return x.tape().record(OpId::LogSoftmax, {x.id()},
                         BasicTensor<T>(x.shape(), detail::row_softmax(x.value(), true)));
}

/// Euclidean norm of all elements. The gradient at the origin is taken as zero.
template <class T>
Var<T> l2norm(const Var<T>& x) {
  T acc = T(0);
  for (T v : x.value().data()) acc += v * v;
  return x.tape().record(OpId::L2Norm, {x.id()}, BasicTensor<T>::scalar(std::sqrt(acc)));
}

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  if (numel(shape) != x.value().size()) {
    throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  OpAttrs attrs;
  attrs.shape = x.shape();
  return x.tape().record(OpId::Reshape, {x.id()}, BasicTensor<T>(std::move(shape), x.value().vec()),
                         attrs);
}

/// Rows [begin, end) along axis 0.
template <class T>
Var<T> slice(const Var<T>& x, std::size_t begin, std::size_t end) {
  const auto& vx = x.value();
  if (vx.rank() == 0 || begin > end || end > vx.dim(0)) {
    throw DimensionError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                         shape_str(vx.shape()));
  }
  const std::size_t stride = vx.dim(0) == 0 ? 0 : vx.size() / vx.dim(0);
  Shape shape = vx.shape();
  shape[0] = end - begin;
  std::vector<T> out(vx.data().begin() + static_cast<std::ptrdiff_t>(begin * stride),
                     vx.data().begin() + static_cast<std::ptrdiff_t>(end * stride));
  OpAttrs attrs;
  attrs.begin = begin;
  attrs.end = end;
  return x.tape().record(OpId::Slice, {x.id()}, BasicTensor<T>(std::move(shape), std::move(out)),
                         attrs);
}

/// Concatenation along axis 0.
template <class T>
Var<T> concat(std::span<const Var<T>> parts) {
  if (parts.empty()) throw DimensionError("concat of nothing");
  Tape<T>& tape = parts[0].tape();
  Shape shape = parts[0].shape();
  if (shape.empty()) throw DimensionError("concat of scalars");
  shape[0] = 0;
  std::vector<T> out;
  std::vector<std::size_t> ids;
  for (const auto& p : parts) {
    if (&p.tape() != &tape) throw ContractError("operands belong to different tapes");
    Shape ps = p.shape();
    if (ps.size() != shape.size() || !std::equal(ps.begin() + 1, ps.end(), shape.begin() + 1)) {
      throw DimensionError("concat " + shape_str(ps) + " onto " + shape_str(shape));
    }
    shape[0] += ps[0];
    out.insert(out.end(), p.value().data().begin(), p.value().data().end());
    ids.push_back(p.id());
  }
  return tape.record(OpId::Concat, std::move(ids), BasicTensor<T>(std::move(shape), std::move(out)));
}

template <class T>
Var<T> concat(std::initializer_list<Var<T>> parts) {
  return concat(std::span<const Var<T>>(parts.begin(), parts.size()));
}

/// Uniform entry point over the primitive set, used by randomized gradient tests.
template <class T>
Var<T> forward_primitive(OpId op, std::span<const Var<T>> in, const OpAttrs& attrs = {}) {
  auto need = [&](std::size_t n) {
    if (in.size() != n) {
      throw ContractError(std::string(op_name(op)) + " expects " + std::to_string(n) + " inputs");
    }
  };
  switch (op) {
    case OpId::MatMul: need(2); return matmul(in[0], in[1]);
    case OpId::Add: need(2); return add(in[0], in[1]);
    case OpId::Sub: need(2); return sub(in[0], in[1]);
    case OpId::Mul: need(2); return mul(in[0], in[1]);
    case OpId::Div: need(2); return div(in[0], in[1]);
    case OpId::BroadcastAdd: need(2); return broadcast_add(in[0], in[1]);
    case OpId::Relu: need(1); return relu(in[0]);
    case OpId::Log: need(1); return log(in[0]);
    case OpId::Sqrt: need(1); return sqrt(in[0]);
    case OpId::Square: need(1); return square(in[0]);
    case OpId::Scale: need(1); return scale(in[0], static_cast<T>(attrs.scalar));
    case OpId::AddScalar: need(1); return add_scalar(in[0], static_cast<T>(attrs.scalar));
    case OpId::Sum: need(1); return sum(in[0]);
    case OpId::Mean: need(1); return mean(in[0]);
    case OpId::SumAxis: need(1); return sum_axis(in[0], attrs.axis);
    case OpId::MeanAxis: need(1); return mean_axis(in[0], attrs.axis);
    case OpId::Variance: need(1); return variance(in[0], attrs.axis);
    case OpId::Softmax: need(1); return softmax(in[0]);
    case OpId::LogSoftmax: need(1); return log_softmax(in[0]);
    case OpId::L2Norm: need(1); return l2norm(in[0]);
    case OpId::Reshape: need(1); return reshape(in[0], attrs.shape);
    case OpId::Slice: need(1); return slice(in[0], attrs.begin, attrs.end);
    case OpId::Concat: return concat(in);
    case OpId::Leaf:
    case OpId::Constant: break;
  }
  throw ContractError(std::string("not a primitive: ") + op_name(op));
}

// ---------------------------------------------------------------------------
// Backward

template <class T>
class Gradients {
 public:
  const BasicTensor<T>& operator[](const Var<T>& leaf) const {
    auto it = grads_.find(leaf.id());
    if (it == grads_.end()) throw ContractError("no gradient: not a requires_grad leaf");
    return it->second;
  }
  bool contains(const Var<T>& leaf) const { return grads_.count(leaf.id()) != 0; }
  std::size_t size() const noexcept { return grads_.size(); }
  const std::map<std::size_t, BasicTensor<T>>& by_id() const noexcept { return grads_; }
  void insert(std::size_t id, BasicTensor<T> grad) { grads_.insert_or_assign(id, std::move(grad)); }

 private:
  std::map<std::size_t, BasicTensor<T>> grads_;
};

namespace detail {

template <class T>
void backward_entry(const Tape<T>& tape, const TapeEntry<T>& e, const std::vector<T>& g,
                    std::vector<std::vector<T>>& grads) {
  auto acc = [&](std::size_t slot) -> std::vector<T>* {
    const std::size_t id = e.operands[slot];
    const auto& src = tape.entry(id);
    if (!src.requires_grad) return nullptr;
    if (grads[id].empty()) grads[id].assign(src.value.size(), T(0));
    return &grads[id];
  };
  const auto& out = e.value;

  switch (e.op) {
    case OpId::MatMul: {
      const auto& a = tape.entry(e.operands[0]).value;
      const auto& b = tape.entry(e.operands[1]).value;
      const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
      if (auto* ga = acc(0)) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            T s = T(0);
            for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * b[p * n + j];
            (*ga)[i * k + p] += s;
          }
      }
      if (auto* gb = acc(1)) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const T av = a[i * k + p];
            for (std::size_t j = 0; j < n; ++j) (*gb)[p * n + j] += av * g[i * n + j];
          }
      }
      break;
    }
    case OpId::Add:
    case OpId::BroadcastAdd:
    case OpId::Sub:
    case OpId::Mul:
    case OpId::Div: {
      const auto& a = tape.entry(e.operands[0]).value;
      const auto& b = tape.entry(e.operands[1]).value;
      const bool same = a.shape() == out.shape() && b.shape() == out.shape();
      std::vector<std::size_t> oa, ob;
      if (!same) {
        oa = broadcast_offsets(a.shape(), out.shape());
        ob = broadcast_offsets(b.shape(), out.shape());
      }
      auto ia = [&](std::size_t i) { return same ? i : oa[i]; };
      auto ib = [&](std::size_t i) { return same ? i : ob[i]; };
      auto* ga = acc(0);
      auto* gb = acc(1);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T av = a[ia(i)], bv = b[ib(i)];
        switch (e.op) {
          case OpId::Sub:
            if (ga) (*ga)[ia(i)] += g[i];
            if (gb) (*gb)[ib(i)] -= g[i];
            break;
          case OpId::Mul:
            if (ga) (*ga)[ia(i)] += g[i] * bv;
            if (gb) (*gb)[ib(i)] += g[i] * av;
            break;
          case OpId::Div:
            if (ga) (*ga)[ia(i)] += g[i] / bv;
            if (gb) (*gb)[ib(i)] -= g[i] * out[i] / bv;
            break;
          default:
            if (ga) (*ga)[ia(i)] += g[i];
            if (gb) (*gb)[ib(i)] += g[i];
            break;
        }
      }
      break;
    }
    case OpId::Relu: {
      const auto& x = tape.entry(e.operands[0]).value;
      if (auto* gx = acc(0))
        for (std::size_t i = 0; i < g.size(); ++i)
          if (x[i] > T(0)) (*gx)[i] += g[i];
      break;
    }
    case OpId::Log: {
      const auto& x = tape.entry(e.operands[0]).value;
      if (auto* gx = acc(0))
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] / x[i];
      break;
    }
    case OpId::Sqrt: {
      if (auto* gx = acc(0))
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] / (T(2) * out[i]);
      break;
    }
    case OpId::Square: {
      const auto& x = tape.entry(e.operands[0]).value;
      if (auto* gx = acc(0))
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += T(2) * x[i] * g[i];
      break;
    }
    case OpId::Scale: {
      const T f = static_cast<T>(e.attrs.scalar);
      if (auto* gx = acc(0))
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * f;
      break;
    }
    case OpId::AddScalar:
    case OpId::Reshape: {
      if (auto* gx = acc(0))
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
      break;
    }
    case OpId::Sum:
    case OpId::Mean: {
      if (auto* gx = acc(0)) {
        const T s = e.op == OpId::Mean ? g[0] / static_cast<T>(gx->size()) : g[0];
        for (T& v : *gx) v += s;
      }
      break;
    }
    case OpId::SumAxis:
    case OpId::MeanAxis:
    case OpId::Variance: {
      const auto& x = tape.entry(e.operands[0]).value;
      const auto s = split_axis(x.shape(), e.attrs.axis);
      auto* gx = acc(0);
      if (!gx) break;
      std::vector<T> mu;
      if (e.op == OpId::Variance) {
        mu = axis_sums(x, s);
        for (T& v : mu) v /= static_cast<T>(s.len);
      }
      const T inv = T(1) / static_cast<T>(s.len);
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t k = 0; k < s.len; ++k)
          for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t r = o * s.inner + in;
            const std::size_t xi = (o * s.len + k) * s.inner + in;
            switch (e.op) {
              case OpId::SumAxis: (*gx)[xi] += g[r]; break;
              case OpId::MeanAxis: (*gx)[xi] += g[r] * inv; break;
              default: (*gx)[xi] += g[r] * T(2) * (x[xi] - mu[r]) * inv; break;
            }
          }
      break;
    }
    case OpId::Softmax:
    case OpId::LogSoftmax: {
      auto* gx = acc(0);
      if (!gx) break;
      const std::size_t cols = out.shape().back();
      const std::size_t rows = cols == 0 ? 0 : out.size() / cols;
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t base = r * cols;
        if (e.op == OpId::Softmax) {
          T dot = T(0);
          for (std::size_t c = 0; c < cols; ++c) dot += g[base + c] * out[base + c];
          for (std::size_t c = 0; c < cols; ++c)
            (*gx)[base + c] += out[base + c] * (g[base + c] - dot);
        } else {
          T gs = T(0);
          for (std::size_t c = 0; c < cols; ++c) gs += g[base + c];
          for (std::size_t c = 0; c < cols; ++c)
            (*gx)[base + c] += g[base + c] - std::exp(out[base + c]) * gs;
        }
      }
      break;
    }
    case OpId::L2Norm: {
      const auto& x = tape.entry(e.operands[0]).value;
      const T norm = out[0];
      if (auto* gx = acc(0); gx && norm > T(0))
        for (std::size_t i = 0; i < x.size(); ++i) (*gx)[i] += g[0] * x[i] / norm;
      break;
    }
    case OpId::Slice: {
      const auto& x = tape.entry(e.operands[0]).value;
      const std::size_t stride = x.dim(0) == 0 ? 0 : x.size() / x.dim(0);
      if (auto* gx = acc(0))
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[e.attrs.begin * stride + i] += g[i];
      break;
    }
    case OpId::Concat: {
      std::size_t offset = 0;
      for (std::size_t slot = 0; slot < e.operands.size(); ++slot) {
        const std::size_t n = tape.entry(e.operands[slot]).value.size();
        if (auto* gx = acc(slot))
          for (std::size_t i = 0; i < n; ++i) (*gx)[i] += g[offset + i];
        offset += n;
      }
      break;
    }
    case OpId::Leaf:
    case OpId::Constant: break;
  }
}

}  // namespace detail

/// Gradient of a scalar `loss` with respect to every requires_grad leaf, scaled by
/// `seed`. The tape is not modified, so backward can be replayed.
template <class T>
Gradients<T> backward(const Tape<T>& tape, const Var<T>& loss, T seed = T(1)) {
  if (&loss.tape() != &tape) throw ContractError("loss does not belong to this tape");
  if (loss.value().size() != 1) {
    throw ContractError("backward needs a scalar loss, got " + shape_str(loss.shape()));
  }
  std::vector<std::vector<T>> grads(tape.size());
  if (loss.requires_grad()) grads[loss.id()] = {seed};
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    const auto& e = tape.entry(id);
    if (!e.requires_grad || e.op == OpId::Leaf || grads[id].empty()) continue;
    detail::backward_entry(tape, e, grads[id], grads);
  }
  Gradients<T> result;
  for (std::size_t id = 0; id < tape.size(); ++id) {
    const auto& e = tape.entry(id);
    if (e.op != OpId::Leaf || !e.requires_grad) continue;
    std::vector<T> g = grads[id].empty() ? std::vector<T>(e.value.size(), T(0)) : std::move(grads[id]);
    result.insert(id, BasicTensor<T>(e.value.shape(), std::move(g)));
  }
  return result;
}

template <class T>
Gradients<T> backward(const Var<T>& loss, T seed = T(1)) {
  return backward(loss.tape(), loss, seed);
}

}  // namespace ufc::diffcore
