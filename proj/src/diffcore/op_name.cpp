// SPDX-License-Identifier: Apache-2.0
#include "ufc/diffcore/tape.hpp"

namespace ufc::diffcore {

const char* op_name(OpId op) noexcept {
  switch (op) {
    case OpId::Leaf: return "leaf";
    case OpId::Constant: return "constant";
    case OpId::MatMul: return "matmul";
    case OpId::Add: return "add";
    case OpId::Sub: return "sub";
    case OpId::Mul: return "mul";
    case OpId::Div: return "div";
    case OpId::BroadcastAdd: return "broadcast_add";
    case OpId::Relu: return "relu";
    case OpId::Log: return "log";
    case OpId::Sqrt: return "sqrt";
    case OpId::Square: return "square";
    case OpId::Scale: return "scale";
    case OpId::AddScalar: return "add_scalar";
    case OpId::Sum: return "sum";
    case OpId::Mean: return "mean";
    case OpId::SumAxis: return "sum_axis";
    case OpId::MeanAxis: return "mean_axis";
    case OpId::Variance: return "variance";
    case OpId::Softmax: return "softmax";
    case OpId::LogSoftmax: return "log_softmax";
    case OpId::L2Norm: return "l2norm";
    case OpId::Reshape: return "reshape";
    case OpId::Slice: return "slice";
    case OpId::Concat: return "concat";
  }
  return "unknown";
}

}  // namespace ufc::diffcore
