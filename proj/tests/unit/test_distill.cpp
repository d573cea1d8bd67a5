// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "distill_cases.hpp"
#include "fixtures.hpp"
#include "gradient_cases.hpp"
#include "ufc/distill/bundle_io.hpp"
#include "ufc/distill/distill.hpp"

namespace {

using namespace ufc;
using namespace ufc::distill;
using ufc::test::small_ensemble;
using ufc::test::small_world;

std::size_t k_by_subtraction(std::size_t ipc, std::size_t c, std::size_t m) {
  std::size_t rest = ipc * c, k = 0;
  while (rest >= c + m) {
    rest -= c + m;
    ++k;
  }
  return k;
}

TEST(ComputeK, KnownValues) {
  EXPECT_EQ(compute_K(50, 10, 4), 35u);
  EXPECT_EQ(compute_K(10, 10, 4), 7u);
  EXPECT_EQ(compute_K(50, 100, 1), 49u);
  EXPECT_THROW(compute_K(1, 10, 4), BudgetError);
  EXPECT_THROW(compute_K(0, 10, 4), ContractError);
  EXPECT_THROW(compute_K(10, 10, 0), ContractError);
}

TEST(ComputeK, MatchesRepeatedSubtraction) {
  Rng rng = make_rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t ipc = 1 + uniform_index(rng, 60);
    const std::size_t c = 1 + uniform_index(rng, 20);
    const std::size_t m = 1 + uniform_index(rng, 8);
    const std::size_t expect = k_by_subtraction(ipc, c, m);
    if (expect == 0) {
      EXPECT_THROW(compute_K(ipc, c, m), BudgetError) << ipc << " " << c << " " << m;
    } else {
      EXPECT_EQ(compute_K(ipc, c, m), expect) << ipc << " " << c << " " << m;
    }
  }
}

TEST(BnAlignment, ZeroWhenRunningStatsMatchTheBatch) {
  Rng rng = make_rng(8);
  for (auto arch : ufc::test::kAllArchs) {
    nn::Model m = nn::Model::initialized({arch, 6, 3}, 5);
    const Tensor batch = ufc::test::random_tensor({12, 6}, rng, 0.0, 1.0);
    ufc::test::align_running_stats(m, batch);
    EXPECT_LE(bn_alignment_loss(m, batch), 1e-6) << nn::to_string(arch);
  }
}

TEST(BnAlignment, ExactlyInvariantToRowOrder) {
  Rng rng = make_rng(9);
  for (auto arch : ufc::test::kAllArchs) {
    const nn::Model m = ufc::test::perturbed_teacher(arch, 6, 3, rng);
    const Tensor batch = ufc::test::random_tensor({17, 6}, rng, 0.0, 1.0);
    const double ref = bn_alignment_loss(m, batch);
    for (int p = 0; p < 10; ++p) {
      const auto perm = permutation(17, rng);
      Tensor shuffled = batch;
      for (std::size_t r = 0; r < 17; ++r)
        std::copy(batch.row(perm[r]).begin(), batch.row(perm[r]).end(), shuffled.row(r).begin());
      EXPECT_EQ(bn_alignment_loss(m, shuffled), ref) << nn::to_string(arch);
    }
  }
}

TEST(BnAlignment, SingleLayerHandExample) {
  EXPECT_NEAR(bn_alignment_loss(ufc::test::single_bn_model(), ufc::test::single_bn_batch()), ufc::test::kSingleBnLoss,
              1e-6);
}

TEST(BnAlignment, NeedsTwoRows) {
  const nn::Model m = nn::Model::initialized({nn::ArchitectureId::A1, 4, 2}, 1);
  EXPECT_THROW(bn_alignment_loss(m, Tensor::zeros({1, 4})), ContractError);
}

class OptimizeUfc : public ::testing::Test {
 protected:
  const nn::Model& teacher() const { return small_world().teachers[1]; }
  data::AnchorSet anchors() const { return data::sample_anchor_set(small_world().toy.train, 0, 4); }
  static SynthesisRecipe recipe(std::size_t iterations) {
    SynthesisRecipe r;
    r.iterations = iterations;
    return r;
  }
};

TEST_F(OptimizeUfc, ZeroIterationsKeepsZeroCompensator) {
  const auto u = optimize_ufc(teacher(), anchors(), 0.01, recipe(0));
  for (float v : u.u.data()) EXPECT_EQ(v, 0.0f);
  ASSERT_EQ(u.objective_trace.size(), 1u);
  EXPECT_EQ(u.initial_objective, u.final_objective);
  EXPECT_EQ(u.optimized_against, nn::ArchitectureId::A2);
}

TEST_F(OptimizeUfc, ReturnsTheBestVisitedIterate) {
  const auto a = anchors();
  const auto u = optimize_ufc(teacher(), a, 0.01, recipe(60));
  ASSERT_EQ(u.objective_trace.size(), 61u);
  EXPECT_LE(u.final_objective, u.initial_objective);
  EXPECT_EQ(*std::min_element(u.objective_trace.begin(), u.objective_trace.end()), u.final_objective);

  // recomputing J at the returned u gives the reported value
  Tape<float> tape;
  Tensor onehot = Tensor::zeros({4, 4});
  for (std::size_t i = 0; i < 4; ++i) onehot.at(i, i) = 1.0f;
  const auto terms = compensator_objective(teacher(), a.instances, onehot, tape.constant(u.u), 0.01);
  EXPECT_EQ(terms.total.value().item(), u.final_objective);
}

TEST_F(OptimizeUfc, DoesNotHurtTeacherAccuracyOnAnchors) {
  for (double alpha : {0.01, 1.0}) {
    for (std::size_t k = 0; k < 6; ++k) {
      const auto a = data::sample_anchor_set(small_world().toy.train, k, 4);
      const auto u = optimize_ufc(teacher(), a, alpha, recipe(60));
      Tensor shifted = a.instances;
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t t = 0; t < 16; ++t) shifted.at(i, t) += u.u[t];
      EXPECT_GE(nn::top1_accuracy(teacher(), shifted, a.labels), nn::top1_accuracy(teacher(), a.instances, a.labels))
          << "alpha " << alpha << ", subset " << k;
    }
  }
}

TEST_F(OptimizeUfc, HugeAnchorsDivergeAtTheFirstIteration) {
  auto a = anchors();
  for (float& v : a.instances.vec()) v = 1e30f;
  try {
    (void)optimize_ufc(teacher(), a, 0.01, recipe(10));
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.iteration(), 0u);
  }
}

TEST(Relabel, SingleMemberIsItsSoftmax) {
  const auto& w = small_world();
  const nn::Model& m = w.teachers[0];
  const Tensor x = w.toy.test.instances;
  Tape<float> tape;
  const Tensor expect = diffcore::softmax(tape.constant(nn::forward_logits(m, x))).value();
  EXPECT_TRUE(diffcore::bitwise_equal(relabel(std::span<const nn::Model>(&m, 1), x), expect));
}

TEST(Relabel, IdenticalMembersMatchOneMember) {
  const auto& w = small_world();
  const std::vector<nn::Model> one(1, w.teachers[2]);
  for (std::size_t m = 2; m <= 4; ++m) {
    const std::vector<nn::Model> many(m, w.teachers[2]);
    EXPECT_TRUE(diffcore::bitwise_equal(relabel(many, w.toy.test.instances), relabel(one, w.toy.test.instances)));
  }
}

TEST(Relabel, AveragesLogitsBeforeTheSoftmax) {
  using nn::ArchitectureId;
  const std::vector<nn::Model> pair = {ufc::test::bias_model(ArchitectureId::A1, 3, {0, 2}),
                                       ufc::test::bias_model(ArchitectureId::A2, 3, {2, 0})};
  const Tensor y = relabel(pair, Tensor::zeros({2, 3}));
  for (std::size_t r = 0; r < 2; ++r) {
    EXPECT_NEAR(y.at(r, 0), 0.5, 1e-7);
    EXPECT_NEAR(y.at(r, 1), 0.5, 1e-7);
  }
  // averaging probabilities instead would give the same here; this pair does not
  const std::vector<nn::Model> skew = {ufc::test::bias_model(ArchitectureId::A1, 3, {0, 2}),
                                       ufc::test::bias_model(ArchitectureId::A2, 3, {1, 0})};
  const Tensor z = relabel(skew, Tensor::zeros({1, 3}));
  EXPECT_NEAR(z.at(0, 0), 0.3775406687981454, 1e-7);
  EXPECT_NEAR(z.at(0, 1), 0.6224593312018546, 1e-7);
}

TEST(Relabel, RowsAreDistributions) {
  const auto ens = small_ensemble();
  const Tensor y = ens.relabel(small_world().toy.test.instances);
  for (std::size_t r = 0; r < y.dim(0); ++r) {
    double s = 0;
    for (float v : y.row(r)) {
      EXPECT_GT(v, 0.0f);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-5);
  }
  EXPECT_EQ(ens.query_count(), 1u);
}

TEST(Ensemble, RejectsRepeatedArchitecture) {
  const auto& t = small_world().teachers;
  EXPECT_THROW(Ensemble({t[0], t[0]}), ContractError);
}

DistillParams quick(std::size_t ipc, std::size_t iterations, unsigned threads = 1) {
  DistillParams p;
  p.ipc = ipc;
  p.recipe.iterations = iterations;
  p.seed = 5;
  p.threads = threads;
  return p;
}

TEST(Distill, ZeroIterationsGiveRelabeledAnchors) {
  const auto ens = small_ensemble(1);
  const auto& train = small_world().toy.train;
  const auto b = distill::distill(train, ens, quick(4, 0));
  ASSERT_EQ(b.K(), 3u);  // floor(4 * 4 / 5)
  for (std::size_t k = 0; k < b.K(); ++k) {
    const auto& s = b.subsets[k];
    EXPECT_EQ(s.anchors.source_indices, data::sample_anchor_set(train, k, 5).source_indices);
    for (float v : s.compensators[0].u.data()) EXPECT_EQ(v, 0.0f);
    EXPECT_TRUE(diffcore::bitwise_equal(s.static_labels, relabel(ens.members(), s.anchors.instances)));
  }
}

TEST(Distill, SizesFollowTheBudget) {
  const auto b = distill::distill(small_world().toy.train, small_ensemble(4), quick(10, 2));
  EXPECT_EQ(b.K(), 5u);  // floor(10 * 4 / 8)
  EXPECT_EQ(b.integrated_size(), 5u * 4u * 4u);
  EXPECT_NO_THROW(b.validate());
  for (const auto& s : b.subsets)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(s.compensators[j].optimized_against, ufc::test::kAllArchs[j]);
}

TEST(Distill, TooSmallBudgetIsBudgetError) {
  EXPECT_THROW(distill::distill(small_world().toy.train, small_ensemble(4), quick(1, 0)), BudgetError);
}

TEST(Distill, SameSeedGivesIdenticalFiles) {
  ufc::test::ScratchDir dir("distill-seed");
  const auto ens = small_ensemble(2);
  save_bundle(dir / "a", distill::distill(small_world().toy.train, ens, quick(6, 5)));
  save_bundle(dir / "b", distill::distill(small_world().toy.train, ens, quick(6, 5)));
  EXPECT_EQ(ufc::test::tree_bytes(dir / "a"), ufc::test::tree_bytes(dir / "b"));
}

TEST(Distill, ThreadCountDoesNotChangeTheResult) {
  ufc::test::ScratchDir dir("distill-threads");
  const auto ens = small_ensemble(4);
  save_bundle(dir / "one", distill::distill(small_world().toy.train, ens, quick(10, 4, 1)));
  save_bundle(dir / "three", distill::distill(small_world().toy.train, ens, quick(10, 4, 3)));
  EXPECT_EQ(ufc::test::tree_bytes(dir / "one"), ufc::test::tree_bytes(dir / "three"));
}

TEST(Distill, SwappingMembersSwapsCompensators) {
  const auto& t = small_world().teachers;
  const auto& train = small_world().toy.train;
  const auto ab = distill::distill(train, Ensemble({t[0], t[3]}), quick(6, 5));
  const auto ba = distill::distill(train, Ensemble({t[3], t[0]}), quick(6, 5));
  ASSERT_EQ(ab.K(), ba.K());
  for (std::size_t k = 0; k < ab.K(); ++k) {
    for (std::size_t j = 0; j < 2; ++j) {
      EXPECT_TRUE(diffcore::bitwise_equal(ab.subsets[k].compensators[j].u, ba.subsets[k].compensators[1 - j].u));
    }
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 2; ++j)
        for (std::size_t c = 0; c < 4; ++c)
          EXPECT_EQ(ab.subsets[k].static_labels.at(i * 2 + j, c), ba.subsets[k].static_labels.at(i * 2 + 1 - j, c));
  }
}

TEST(Bundle, RoundTripIsBitwise) {
  ufc::test::ScratchDir dir("bundle");
  const auto b = distill::distill(small_world().toy.train, small_ensemble(2), quick(6, 3));
  save_bundle(dir / "a", b);
  const auto back = load_bundle(dir / "a");
  EXPECT_EQ(back.K(), b.K());
  EXPECT_EQ(back.M, b.M);
  EXPECT_EQ(back.provenance.architectures, b.provenance.architectures);
  for (std::size_t k = 0; k < b.K(); ++k) {
    EXPECT_TRUE(diffcore::bitwise_equal(back.subsets[k].anchors.instances, b.subsets[k].anchors.instances));
    EXPECT_TRUE(diffcore::bitwise_equal(back.subsets[k].static_labels, b.subsets[k].static_labels));
    EXPECT_EQ(back.subsets[k].anchors.labels, b.subsets[k].anchors.labels);
    for (std::size_t j = 0; j < b.M; ++j)
      EXPECT_TRUE(diffcore::bitwise_equal(back.subsets[k].compensators[j].u, b.subsets[k].compensators[j].u));
  }
  save_bundle(dir / "b", back);
  EXPECT_EQ(ufc::test::tree_bytes(dir / "a"), ufc::test::tree_bytes(dir / "b"));
  EXPECT_EQ(bundle_kind(dir / "a"), "infer");
}

TEST(Bundle, DamagedFilesAreArtifactErrors) {
  ufc::test::ScratchDir dir("bundle-bad");
  save_bundle(dir / "a", distill::distill(small_world().toy.train, small_ensemble(1), quick(4, 0)));
  std::filesystem::resize_file(dir / "a" / kLabelsFile, 8);
  EXPECT_THROW(load_bundle(dir / "a"), ArtifactError);
  EXPECT_THROW(load_bundle(dir / "missing"), ArtifactError);
}

}  // namespace
