// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "distill_cases.hpp"
#include "fixtures.hpp"
#include "gradient_cases.hpp"
#include "ufc/distill/bundle_io.hpp"
#include "ufc/metrics/analysis.hpp"
#include "ufc/metrics/budget.hpp"

namespace {

using namespace ufc;
using namespace ufc::metrics;
using ufc::test::small_ensemble;
using ufc::test::small_world;

/// A hand-built bundle with K subsets of C anchors, M compensators, d features.
distill::DistilledDataset synthetic_bundle(std::size_t K, std::size_t C, std::size_t M, std::size_t d) {
  distill::DistilledDataset b;
  b.C = C;
  b.M = M;
  b.dim = d;
  b.ipc = 10;
  b.provenance.architectures.assign(M, nn::ArchitectureId::A1);
  for (std::size_t j = 0; j < M; ++j) b.provenance.architectures[j] = ufc::test::kAllArchs[j % 4];
  b.subsets.resize(K);
  for (auto& s : b.subsets) {
    s.anchors.instances = Tensor::zeros({C, d});
    for (std::size_t i = 0; i < C; ++i) {
      s.anchors.labels.push_back(static_cast<std::int32_t>(i));
      s.anchors.source_indices.push_back(i);
    }
    for (std::size_t j = 0; j < M; ++j) {
      distill::UFC u;
      u.u = Tensor::zeros({d});
      u.optimized_against = b.provenance.architectures[j];
      s.compensators.push_back(u);
    }
    s.static_labels = Tensor::zeros({C * M, C});
  }
  return b;
}

data::LabeledDataset rows_of(std::size_t n, std::size_t d) {
  data::LabeledDataset o;
  o.class_count = 2;
  o.instances = Tensor::zeros({n, d});
  for (std::size_t r = 0; r < n; ++r) o.labels.push_back(static_cast<std::int32_t>(r % 2));
  return o;
}

TEST(Budget, ByteCountsOfAKnownBundle) {
  const auto b = synthetic_bundle(7, 10, 4, 64);
  const auto original = rows_of(2000, 64);
  const auto r = compression_ratio(b, original);
  EXPECT_EQ(r.image_bytes, 17920u);        // 7 * 10 * 64 * 4
  EXPECT_EQ(r.compensator_bytes, 7168u);   // 7 * 4 * 64 * 4
  EXPECT_EQ(r.label_bytes, 11200u);        // 7 * 10 * 4 * 10 * 4
  EXPECT_EQ(r.original_bytes, 512000u);    // 2000 * 64 * 4
  const auto manifest = distill::manifest_text(distill::bundle_manifest(b), distill::bundle_payload(b));
  EXPECT_EQ(r.manifest_bytes, manifest.size());
  EXPECT_DOUBLE_EQ(r.cr, (17920.0 + 7168.0 + 11200.0 + static_cast<double>(manifest.size())) / 512000.0);
}

TEST(Budget, DynamicLabelsCountOncePerEpoch) {
  const auto b = synthetic_bundle(7, 10, 4, 64);
  const auto original = rows_of(2000, 64);
  const auto s = compression_ratio(b, original);
  const auto d = compression_ratio(b, original, LabelBudget::dynamic_labels(25));
  EXPECT_EQ(d.label_bytes, 280000u);
  EXPECT_EQ(static_cast<double>(s.label_bytes) / static_cast<double>(d.label_bytes), 1.0 / 25.0);
  EXPECT_EQ(d.image_bytes, s.image_bytes);
  EXPECT_LT(s.cr, d.cr);
  EXPECT_EQ(d.to_json().at("label_mode"), "dynamic");
  EXPECT_THROW(compression_ratio(b, original, LabelBudget::dynamic_labels(0)), ContractError);
}

TEST(Budget, LabelRatioIsOneOverEForEveryShape) {
  Rng rng = make_rng(77);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t K = 1 + uniform_index(rng, 6), C = 2 + uniform_index(rng, 8), M = 1 + uniform_index(rng, 4);
    const std::size_t E = 1 + uniform_index(rng, 100);
    const auto b = synthetic_bundle(K, C, M, 3);
    const auto original = rows_of(50, 3);
    const auto s = compression_ratio(b, original), d = compression_ratio(b, original, LabelBudget::dynamic_labels(E));
    EXPECT_EQ(s.label_bytes, K * C * M * C * 4);
    EXPECT_EQ(d.label_bytes, E * s.label_bytes);
  }
}

TEST(Budget, DirectorySizesMatchTheReport) {
  ufc::test::ScratchDir dir("budget");
  distill::DistillParams p;
  p.ipc = 6;
  p.recipe.iterations = 2;
  const auto b = distill::distill(small_world().toy.train, small_ensemble(2), p);
  distill::save_bundle(dir / "b", b);
  for (auto labels : {LabelBudget::static_labels(), LabelBudget::dynamic_labels(13)}) {
    const auto mem = compression_ratio(b, small_world().toy.train, labels);
    const auto disk = budget_from_directory(dir / "b", small_world().toy.train, labels);
    EXPECT_EQ(mem.to_json(), disk.to_json());
  }
  std::uint64_t total = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir / "b")) total += e.file_size();
  EXPECT_EQ(total, compression_ratio(b, small_world().toy.train).total_bytes());
}

TEST(Budget, BaselinesGoThroughTheSamePath) {
  ufc::test::ScratchDir dir("budget-baseline");
  const auto s = baselines::random_coreset(small_world().toy.train, 3, 1);
  baselines::save_baseline(dir / "c", s);
  const auto mem = compression_ratio(s, small_world().toy.train);
  EXPECT_EQ(mem.to_json(), budget_from_directory(dir / "c", small_world().toy.train).to_json());
  EXPECT_EQ(mem.image_bytes, 12u * 16u * 4u);
  EXPECT_EQ(mem.label_bytes, 12u * 4u * 4u);
  EXPECT_EQ(mem.compensator_bytes, 0u);
}

TEST(Budget, EmptyBundleIsZero) {
  const auto r = budget_from_parts({}, 300, 32, 1000, {});
  EXPECT_EQ(r.total_bytes(), 0u);
  EXPECT_EQ(r.cr, 0.0);
  EXPECT_EQ(r.original_bytes, 1000u);
  EXPECT_THROW(budget_from_parts({}, 0, 12, 10, {}), ContractError);
}

TEST(Budget, OriginalBytesFollowPrecision) {
  auto d = rows_of(10, 5);
  EXPECT_EQ(original_bytes(d), 200u);
  d.precision_bits = 16;
  EXPECT_EQ(original_bytes(d), 100u);
}

TEST(Duplication, IdenticalFeaturesScoreOne) {
  const Tensor f({4, 3}, {1, 2, 3, 1, 2, 3, 0, 1, 0, 0, 5, 0});
  const std::vector<std::int32_t> labels = {0, 0, 1, 1};
  const auto r = duplication_of_features(f, labels, 2);
  EXPECT_NEAR(r.per_class[0], 1.0, 1e-12);
  EXPECT_NEAR(r.per_class[1], 1.0, 1e-12);
  EXPECT_NEAR(r.mean, 1.0, 1e-12);
}

TEST(Duplication, OrthogonalFeaturesScoreZero) {
  const Tensor f({3, 3}, {1, 0, 0, 0, 2, 0, 0, 0, 3});
  const std::vector<std::int32_t> labels = {0, 0, 0};
  EXPECT_EQ(duplication_of_features(f, labels, 1).mean, 0.0);
}

TEST(Duplication, HandExampleWithExclusions) {
  // class 0: (1,0), (1,1) -> cos 1/sqrt(2); class 1: one usable row -> NaN; one zero row skipped
  const Tensor f({4, 2}, {1, 0, 1, 1, 0, 0, 3, 4});
  const std::vector<std::int32_t> labels = {0, 0, 1, 1};
  const auto r = duplication_of_features(f, labels, 2);
  EXPECT_EQ(r.excluded, 1u);
  EXPECT_NEAR(r.per_class[0], 0.7071067811865475, 1e-12);
  EXPECT_TRUE(std::isnan(r.per_class[1]));
  EXPECT_NEAR(r.mean, 0.7071067811865475, 1e-12);
  const std::vector<std::int32_t> lonely = {0, 1, 0, 1};
  const Tensor g({4, 2}, {1, 0, 1, 1, 0, 0, 0, 0});
  EXPECT_THROW(duplication_of_features(g, lonely, 2), ContractError);
}

TEST(Duplication, InvariantToRowOrder) {
  Rng rng = make_rng(12);
  const Tensor f = ufc::test::random_tensor({20, 6}, rng);
  std::vector<std::int32_t> labels(20);
  for (std::size_t r = 0; r < 20; ++r) labels[r] = static_cast<std::int32_t>(r % 3);
  const double ref = duplication_of_features(f, labels, 3).mean;
  const auto perm = permutation(20, rng);
  Tensor g = f;
  std::vector<std::int32_t> l2(20);
  for (std::size_t r = 0; r < 20; ++r) {
    std::copy(f.row(perm[r]).begin(), f.row(perm[r]).end(), g.row(r).begin());
    l2[r] = labels[perm[r]];
  }
  EXPECT_NEAR(duplication_of_features(g, l2, 3).mean, ref, 1e-12);
}

TEST(Duplication, ProbeUsesPenultimateFeatures) {
  const auto& w = small_world();
  const auto& probe = w.teachers[0];
  const auto a = feature_duplication(probe, w.toy.test.instances, w.toy.test.labels, 4);
  const auto b = duplication_of_features(nn::penultimate_features(probe, w.toy.test.instances), w.toy.test.labels, 4);
  EXPECT_EQ(a.mean, b.mean);
}

double ce_at(const nn::Model& m, const Tensor& x, std::size_t label) {
  const Tensor z = nn::forward_logits(m, Tensor({1, x.size()}, x.vec()));
  double mx = -1e300, s = 0;
  for (float v : z.data()) mx = std::max(mx, static_cast<double>(v));
  for (float v : z.data()) s += std::exp(v - mx);
  return mx + std::log(s) - z[label];
}

TEST(Landscape, ConstantModelGivesAFlatGrid) {
  const auto m = ufc::test::bias_model(nn::ArchitectureId::A2, 3, {1, 0, -1});
  const Tensor grid = loss_landscape_grid(m, Tensor({3}, {0.1f, 0.2f, 0.3f}), 1, Tensor({3}, {1, 0, 0}),
                                          Tensor({3}, {0, 1, 0}), 2.0, 5);
  ASSERT_EQ(grid.shape(), (diffcore::Shape{5, 5}));
  const double expect = std::log(std::exp(1.0) + 1.0 + std::exp(-1.0));  // CE of label 1 at logits (1,0,-1)
  for (float v : grid.data()) EXPECT_NEAR(v, expect, 1e-6);
}

TEST(Landscape, CenterIsTheAnchorLoss) {
  const auto& w = small_world();
  Rng rng = make_rng(0x1a4d);
  const Tensor anchor(diffcore::Shape{16}, std::vector<float>(w.toy.test.instances.row(0).begin(), w.toy.test.instances.row(0).end()));
  const Tensor u = ufc::test::random_tensor({16}, rng), v = ufc::test::random_tensor({16}, rng);
  const auto label = static_cast<std::size_t>(w.toy.test.labels[0]);
  const Tensor grid = loss_landscape_grid(w.teachers[1], anchor, w.toy.test.labels[0], u, v, 1.0, 7);
  EXPECT_NEAR(grid.at(3, 3), ce_at(w.teachers[1], anchor, label), 1e-6);
  const Tensor single = loss_landscape_grid(w.teachers[1], anchor, w.toy.test.labels[0], u, v, 1.0, 1);
  EXPECT_EQ(single.at(0, 0), grid.at(3, 3));
  // the corner (-1, -1) along unit directions
  double nu = 0, nv = 0;
  for (std::size_t t = 0; t < 16; ++t) {
    nu += static_cast<double>(u[t]) * u[t];
    nv += static_cast<double>(v[t]) * v[t];
  }
  Tensor corner = anchor;
  for (std::size_t t = 0; t < 16; ++t)
    corner[t] = static_cast<float>(anchor[t] - u[t] / std::sqrt(nu) - v[t] / std::sqrt(nv));
  EXPECT_NEAR(grid.at(0, 0), ce_at(w.teachers[1], corner, label), 1e-5);
}

TEST(Landscape, RejectsDegenerateDirections) {
  const auto m = ufc::test::bias_model(nn::ArchitectureId::A1, 2, {0, 0});
  const Tensor a({2}, {0, 0});
  EXPECT_THROW(loss_landscape_grid(m, a, 0, Tensor({2}, {1, 1}), Tensor({2}, {2, 2}), 1, 3), ContractError);
  EXPECT_THROW(loss_landscape_grid(m, a, 0, Tensor({2}, {1, 1}), Tensor({2}, {-1, -1}), 1, 3), ContractError);
  EXPECT_THROW(loss_landscape_grid(m, a, 0, Tensor({2}, {0, 0}), Tensor({2}, {1, 0}), 1, 3), ContractError);
  EXPECT_THROW(loss_landscape_grid(m, a, 0, Tensor({2}, {1, 0}), Tensor({2}, {0, 1}), 1, 0), ContractError);
  EXPECT_THROW(loss_landscape_grid(m, a, 5, Tensor({2}, {1, 0}), Tensor({2}, {0, 1}), 1, 2), ContractError);
}

TEST(Landscape, CsvLayout) {
  ufc::test::ScratchDir dir("grid");
  write_grid_csv(dir / "g.csv", Tensor({2, 2}, {0.5f, 1, 2, 0.25f}));
  EXPECT_EQ(ufc::test::file_bytes(dir / "g.csv"), "0.5,1\n2,0.25\n");
}

TEST(Linearity, EndpointsHaveNoGap) {
  const auto ens = small_ensemble(2);
  Rng rng = make_rng(0x11ea);
  const auto& x = small_world().toy.test.instances;
  const auto pairs = sample_pairs(x.dim(0), 25, rng);
  const std::vector<double> lambdas = {0.0, 0.5, 1.0};
  const auto gaps = label_linearity_gap(ens, x, pairs, lambdas);
  ASSERT_EQ(gaps.size(), 3u);
  EXPECT_EQ(gaps[0].max_gap, 0.0);
  EXPECT_EQ(gaps[2].max_gap, 0.0);
  EXPECT_GE(gaps[1].max_gap, gaps[1].mean_gap);
  EXPECT_GE(gaps[1].mean_gap, 0.0);
}

TEST(Linearity, PairsAreDistinctRows) {
  Rng rng = make_rng(1);
  for (const auto& [a, b] : sample_pairs(5, 200, rng)) {
    EXPECT_NE(a, b);
    EXPECT_LT(a, 5u);
    EXPECT_LT(b, 5u);
  }
  EXPECT_THROW(sample_pairs(1, 3, rng), ContractError);
}

TEST(Features, CsvHasOneColumnPerFeature) {
  ufc::test::ScratchDir dir("features");
  const auto& w = small_world();
  export_penultimate_features(w.teachers[3], w.toy.test, dir / "f.csv");
  std::istringstream in(ufc::test::file_bytes(dir / "f.csv"));
  std::string line;
  std::size_t rows = 0;
  std::getline(in, line);
  EXPECT_EQ(line.rfind("label,f0,", 0), 0u);
  EXPECT_EQ(static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')), w.teachers[3].feature_dim());
  while (std::getline(in, line)) {
    EXPECT_EQ(static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')), w.teachers[3].feature_dim());
    ++rows;
  }
  EXPECT_EQ(rows, w.toy.test.size());
  export_penultimate_features(w.teachers[3], w.toy.test, dir / "g.csv");
  EXPECT_EQ(ufc::test::file_bytes(dir / "f.csv"), ufc::test::file_bytes(dir / "g.csv"));
}

TEST(Features, EmptyDatasetWritesTheHeaderOnly) {
  ufc::test::ScratchDir dir("features-empty");
  data::LabeledDataset empty;
  empty.class_count = 4;
  empty.instances = Tensor::zeros({0, 16});
  const nn::Model m = nn::Model::initialized({nn::ArchitectureId::A4, 16, 4}, 1);
  export_penultimate_features(m, empty, dir / "f.csv");
  EXPECT_EQ(ufc::test::file_bytes(dir / "f.csv"),
            "label,f0,f1,f2,f3,f4,f5,f6,f7,f8,f9,f10,f11,f12,f13,f14,f15,f16,f17,f18,f19,f20,f21,f22,f23,"
            "f24,f25,f26,f27,f28,f29,f30,f31\n");
}

}  // namespace
