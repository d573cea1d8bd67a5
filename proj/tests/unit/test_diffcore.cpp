// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <thread>

#include "gradient_cases.hpp"
#include "ufc/diffcore/gradcheck.hpp"
#include "ufc/diffcore/tape.hpp"

namespace {

using namespace ufc;
using namespace ufc::diffcore;

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<float>(5)), DimensionError);
  const Tensor t({2, 3}, std::vector<float>(6, 1.0f));
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(Tensor::scalar(2.0f).item(), 2.0f);
}

TEST(Primitives, MatmulWithIdentity) {
  Tape<float> tape;
  const auto eye = tape.constant(Tensor({2, 2}, {1, 0, 0, 1}));
  const Tensor a({2, 2}, {0.5f, -2.0f, 3.25f, 7.0f});
  EXPECT_TRUE(bitwise_equal(matmul(eye, tape.constant(a)).value(), a));
}

TEST(Primitives, Relu) {
  Tape<float> tape;
  const auto y = relu(tape.constant(Tensor({3}, {-1, 0, 2})));
  EXPECT_EQ(y.value().vec(), (std::vector<float>{0, 0, 2}));
}

TEST(Primitives, L2NormOfThreeFour) {
  Tape<float> tape;
  EXPECT_EQ(l2norm(tape.constant(Tensor({2}, {3, 4}))).value().item(), 5.0f);
}

TEST(Primitives, SoftmaxRowsSumToOne) {
  Rng rng = make_rng(3);
  Tape<float> tape;
  const auto p = softmax(tape.constant(ufc::test::random_tensor({5, 7}, rng, -5, 5))).value();
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0;
    for (float v : p.row(r)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Primitives, ShapeMismatchIsDimensionError) {
  Tape<float> tape;
  const auto a = tape.constant(Tensor::zeros({2, 3}));
  const auto b = tape.constant(Tensor::zeros({2, 2}));
  EXPECT_THROW(matmul(a, b), DimensionError);
  EXPECT_THROW(add(a, b), DimensionError);
  EXPECT_THROW(slice(a, 1, 3), DimensionError);
  EXPECT_THROW(reshape(a, {4}), DimensionError);
}

TEST(Primitives, NonFiniteOutputIsNumericError) {
  Tape<float> tape;
  EXPECT_THROW(log(tape.constant(Tensor({1}, {0.0f}))), NumericError);
  EXPECT_THROW(sqrt(tape.constant(Tensor({1}, {-1.0f}))), NumericError);
}

TEST(Primitives, ForwardPrimitiveChecksArity) {
  Tape<float> tape;
  std::vector<Var<float>> one = {tape.constant(Tensor::zeros({2}))};
  EXPECT_THROW(forward_primitive<float>(OpId::MatMul, one), ContractError);
  EXPECT_THROW(forward_primitive<float>(OpId::Leaf, one), ContractError);
}

TEST(Primitives, ConstantsRecordNothing) {
  Tape<float> tape;
  const auto a = tape.constant(Tensor({2}, {1, 2}));
  (void)square(add(a, a));
  EXPECT_EQ(tape.recorded_count(), 0u);
  const auto x = tape.variable(Tensor({2}, {1, 2}));
  (void)square(add(a, x));
  EXPECT_EQ(tape.recorded_count(), 2u);
}

TEST(Backward, SumOfSquares) {
  Tape<float> tape;
  const auto x = tape.variable(Tensor({1}, {3}));
  EXPECT_EQ(backward(tape, sum(square(x)))[x].vec(), (std::vector<float>{6}));
}

TEST(Backward, MeanSpreadsEvenly) {
  Tape<float> tape;
  const auto x = tape.variable(Tensor({4}, {1, -2, 5, 0}));
  EXPECT_EQ(backward(tape, mean(x))[x].vec(), (std::vector<float>(4, 0.25f)));
}

TEST(Backward, NonScalarLossIsContractError) {
  Tape<float> tape;
  const auto x = tape.variable(Tensor({2}, {1, 2}));
  EXPECT_THROW(backward(tape, square(x)), ContractError);
}

TEST(Backward, UnusedLeafGetsZeroGradient) {
  Tape<float> tape;
  const auto x = tape.variable(Tensor({2}, {1, 2}));
  const auto y = tape.variable(Tensor({3}, {1, 2, 3}));
  const auto g = backward(tape, sum(x));
  EXPECT_EQ(g[y].vec(), (std::vector<float>(3, 0.0f)));
}

TEST(Backward, SharedOperandAccumulates) {
  Tape<float> tape;
  const auto x = tape.variable(Tensor({1}, {2}));
  // d/dx (x*x + x) = 2x + 1
  EXPECT_EQ(backward(tape, sum(add(mul(x, x), x)))[x].item(), 5.0f);
}

TEST(FiniteDiff, SquareAtThree) {
  const double err = finite_diff_check([](auto&, const auto& v) { return sum(mul(v[0], v[0])); },
                                       {Tensor({1}, {3})}, 1e-3);
  EXPECT_LE(err, 1e-6);
}

TEST(FiniteDiff, RejectsNonPositiveStep) {
  EXPECT_THROW(finite_diff_check([](auto&, const auto& v) { return sum(v[0]); }, {Tensor({1}, {3})}, 0.0),
               ContractError);
}

TEST(FiniteDiff, CrossEntropyOfLinearLogits) {
  Rng rng = make_rng(17);
  const Tensor w = ufc::test::random_tensor({4, 3}, rng);
  const Tensor x = ufc::test::random_tensor({1, 4}, rng);
  Tensor y = Tensor::zeros({1, 3});
  y.at(0, 2) = 1.0f;
  const double err = finite_diff_check(
      [&](auto& tape, const auto& v) {
        using T = ufc::test::scalar_of<decltype(v[0])>;
        const auto logits = matmul(tape.constant(x.cast<T>()), v[0]);
        return scale(sum(mul(tape.constant(y.cast<T>()), log_softmax(logits))), T(-1));
      },
      {w}, 1e-3);
  EXPECT_LE(err, 1e-4);
}

TEST(FiniteDiff, DetectsAWrongGradient) {
  // relu at a kink: the one-sided analytic slope disagrees with the central quotient.
  const double err = finite_diff_check([](auto&, const auto& v) { return sum(relu(v[0])); },
                                       {Tensor({1}, {0.0f})}, 1e-3);
  EXPECT_NEAR(err, 0.5, 1e-9);
}

TEST(FiniteDiff, HundredRandomizedCases) {
  const auto results = ufc::test::run_gradient_cases(100, 2026);
  ASSERT_EQ(results.size(), 100u);
  for (const auto& r : results) EXPECT_LE(r.error, 1e-4) << r.name;
}

TEST(Backward, LinearInUpstreamGradient) {
  Rng rng = make_rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Tape<float> tape;
    const auto a = tape.variable(ufc::test::random_tensor({3, 4}, rng));
    const auto b = tape.variable(ufc::test::random_tensor({4, 2}, rng));
    const auto loss = sum(log_softmax(relu(matmul(a, b))));
    const auto g1 = backward(tape, loss, 1.0f);
    const auto g2 = backward(tape, loss, 2.0f);
    for (const auto* leaf : {&a, &b}) {
      const auto& x = g1[*leaf];
      const auto& y = g2[*leaf];
      for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], 2.0f * x[i], 1e-6);
    }
  }
}

TEST(Backward, ReplayIsBitwiseIdentical) {
  Rng rng = make_rng(9);
  Tape<float> tape;
  const auto a = tape.variable(ufc::test::random_tensor({6, 5}, rng));
  const auto loss = l2norm(sub(variance(a, 0), mean_axis(a, 0)));
  const auto g1 = backward(tape, loss);
  const auto g2 = backward(tape, loss);
  EXPECT_TRUE(bitwise_equal(g1[a], g2[a]));
}

TEST(Backward, IndependentTapesOnThreadsAgree) {
  Rng rng = make_rng(11);
  const Tensor a = ufc::test::random_tensor({8, 8}, rng);
  auto grad_of = [&] {
    Tape<float> tape;
    const auto x = tape.variable(a);
    return backward(tape, sum(softmax(matmul(x, x))))[x];
  };
  const Tensor reference = grad_of();
  std::vector<Tensor> results(4);
  std::vector<std::thread> pool;
  for (auto& r : results) pool.emplace_back([&] { r = grad_of(); });
  for (auto& t : pool) t.join();
  for (const auto& r : results) EXPECT_TRUE(bitwise_equal(r, reference));
}

}  // namespace
