// SPDX-License-Identifier: Apache-2.0
#include "ufc/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ufc/errors.hpp"
#include "ufc/util/binary_io.hpp"
#include "ufc/util/rng.hpp"

namespace ufc::data {
namespace fs = std::filesystem;
using nlohmann::json;

void LabeledDataset::validate() const {
  if (instances.rank() != 2 || instances.dim(0) != labels.size()) {
    throw ContractError("dataset: " + std::to_string(labels.size()) + " labels for instances " +
                        diffcore::shape_str(instances.shape()));
  }
  for (auto y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= class_count) {
      throw ContractError("dataset: label " + std::to_string(y) + " outside [0, " +
                          std::to_string(class_count) + ")");
    }
  }
  const auto counts = class_counts();
  for (std::size_t c = 0; c < counts.size(); ++c)
    if (counts[c] == 0) throw ContractError("dataset: class " + std::to_string(c) + " is empty");
}

std::vector<std::size_t> LabeledDataset::class_counts() const {
  std::vector<std::size_t> counts(class_count, 0);
  for (auto y : labels) ++counts.at(static_cast<std::size_t>(y));
  return counts;
}

std::vector<std::vector<std::size_t>> LabeledDataset::indices_by_class() const {
  std::vector<std::vector<std::size_t>> out(class_count);
  for (std::size_t i = 0; i < labels.size(); ++i) out.at(static_cast<std::size_t>(labels[i])).push_back(i);
  return out;
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
  const std::size_t d = dim();
  std::vector<float> rows;
  rows.reserve(indices.size() * d);
  LabeledDataset out;
  out.class_count = class_count;
  out.precision_bits = precision_bits;
  for (std::size_t i : indices) {
    const auto r = instances.row(i);
    rows.insert(rows.end(), r.begin(), r.end());
    out.labels.push_back(labels.at(i));
  }
  out.instances = Tensor({indices.size(), d}, std::move(rows));
  return out;
}

Tensor LabeledDataset::one_hot() const {
  Tensor t = Tensor::zeros({size(), class_count});
  for (std::size_t i = 0; i < size(); ++i) t.at(i, static_cast<std::size_t>(labels[i])) = 1.0f;
  return t;
}

std::vector<float> smooth_template(std::size_t dim, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0x7e3);
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(dim))));
  const bool grid = side * side == dim;
  constexpr int kWaves = 4;
  constexpr double kTwoPi = 6.283185307179586;
  struct Wave {
    double fx, fy, phase, amp;
  };
  Wave waves[kWaves];
  for (auto& w : waves) {
    do {
      w.fx = static_cast<double>(uniform_index(rng, 3));
      w.fy = grid ? static_cast<double>(uniform_index(rng, 3)) : 0.0;
    } while (w.fx == 0.0 && w.fy == 0.0 && grid);
    if (!grid) w.fx = 1.0 + static_cast<double>(uniform_index(rng, 3));
    w.phase = kTwoPi * uniform01(rng);
    w.amp = 0.5 + 0.5 * uniform01(rng);
  }
  std::vector<double> raw(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    const double x = grid ? static_cast<double>(i % side) / static_cast<double>(side)
                          : static_cast<double>(i) / static_cast<double>(dim);
    const double y = grid ? static_cast<double>(i / side) / static_cast<double>(side) : 0.0;
    double v = 0.0;
    for (const auto& w : waves) v += w.amp * std::cos(kTwoPi * (w.fx * x + w.fy * y) + w.phase);
    raw[i] = v;
  }
  const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
  const double range = *hi - *lo > 1e-12 ? *hi - *lo : 1.0;
  std::vector<float> out(dim);
  for (std::size_t i = 0; i < dim; ++i)
    out[i] = static_cast<float>(0.15 + 0.7 * (raw[i] - *lo) / range);
  return out;
}

std::size_t test_share(std::size_t n) { return (n + 2) / 5; }

ToyDataset generate_toy_dataset(const ToyParams& p) {
  if (p.classes < 2 || p.dim < 2 || p.n_per_class < 4) {
    throw ContractError("generate_toy_dataset: need C >= 2, d >= 2, n_per_class >= 4");
  }
  if (p.spread < 0.0) throw ContractError("generate_toy_dataset: spread must be >= 0");
  ToyDataset out;
  std::vector<float> templates;
  std::vector<float> train_rows, test_rows;
  for (std::size_t c = 0; c < p.classes; ++c) {
    const auto tpl = smooth_template(p.dim, mix_seed(p.seed, 1000 + c));
    templates.insert(templates.end(), tpl.begin(), tpl.end());
    Rng noise = make_rng(p.seed, 2000 + c);
    std::vector<std::vector<float>> members(p.n_per_class, std::vector<float>(p.dim));
    for (auto& m : members)
      for (std::size_t i = 0; i < p.dim; ++i) {
        const double v = tpl[i] + p.spread * normal01(noise);
        m[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    Rng split = make_rng(p.seed, 3000 + c);
    const auto order = permutation(p.n_per_class, split);
    const std::size_t n_test = test_share(p.n_per_class);
    for (std::size_t r = 0; r < order.size(); ++r) {
      const auto& m = members[order[r]];
      auto& rows = r < n_test ? test_rows : train_rows;
      auto& ds = r < n_test ? out.test : out.train;
      rows.insert(rows.end(), m.begin(), m.end());
      ds.labels.push_back(static_cast<std::int32_t>(c));
    }
  }
  out.train.class_count = out.test.class_count = p.classes;
  out.train.instances = Tensor({out.train.labels.size(), p.dim}, std::move(train_rows));
  out.test.instances = Tensor({out.test.labels.size(), p.dim}, std::move(test_rows));
  out.templates = Tensor({p.classes, p.dim}, std::move(templates));
  return out;
}

AnchorSet sample_anchor_set(const LabeledDataset& dataset, std::size_t k_index, std::uint64_t seed) {
  const auto by_class = dataset.indices_by_class();
  const std::size_t d = dataset.dim();
  AnchorSet out;
  std::vector<float> rows;
  rows.reserve(dataset.class_count * d);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    const auto& members = by_class[c];
    if (k_index >= members.size()) {
      throw BudgetError("anchor set " + std::to_string(k_index) + ": class " + std::to_string(c) +
                        " exhausted (" + std::to_string(members.size()) + " instances)");
    }
    Rng rng = make_rng(seed, 50000 + c);
    const auto perm = permutation(members.size(), rng);
    const std::size_t src = members[perm[k_index]];
    const auto r = dataset.instances.row(src);
    rows.insert(rows.end(), r.begin(), r.end());
    out.labels.push_back(static_cast<std::int32_t>(c));
    out.source_indices.push_back(src);
  }
  out.instances = Tensor({dataset.class_count, d}, std::move(rows));
  return out;
}

InputStats input_statistics(const Tensor& instances) {
  if (instances.size() == 0) return {};
  double s = 0.0;
  for (float v : instances.data()) s += v;
  const double mean = s / static_cast<double>(instances.size());
  double ss = 0.0;
  for (float v : instances.data()) ss += (v - mean) * (v - mean);
  double sd = std::sqrt(ss / static_cast<double>(instances.size()));
  if (sd < 1e-6) sd = 1.0;
  return {static_cast<float>(mean), static_cast<float>(sd)};
}

void save_dataset(const fs::path& dir, const LabeledDataset& dataset, const json& meta) {
  fs::create_directories(dir);
  json m;
  m["format"] = "ufckit-dataset";
  m["version"] = 1;
  m["count"] = dataset.size();
  m["dim"] = dataset.dim();
  m["class_count"] = dataset.class_count;
  m["precision_bits"] = dataset.precision_bits;
  m["instances_file"] = "instances.bin";
  m["labels_file"] = "labels.bin";
  m["meta"] = meta;
  io::write_f32_le(dir / "instances.bin", dataset.instances.data());
  io::write_i32_le(dir / "labels.bin", dataset.labels);
  io::write_text(dir / "manifest.json", m.dump(2) + "\n");
}

LabeledDataset load_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  json m;
  try {
    m = json::parse(io::read_text(manifest_path));
    if (m.at("format") != "ufckit-dataset") throw ArtifactError(manifest_path.string(), "not a dataset manifest");
    LabeledDataset ds;
    const auto n = m.at("count").get<std::size_t>();
    const auto d = m.at("dim").get<std::size_t>();
    ds.class_count = m.at("class_count").get<std::size_t>();
    ds.precision_bits = m.at("precision_bits").get<std::uint32_t>();
    ds.instances = Tensor({n, d}, io::read_f32_le(dir / m.at("instances_file").get<std::string>(), n * d));
    ds.labels = io::read_i32_le(dir / m.at("labels_file").get<std::string>(), n);
    for (auto y : ds.labels)
      if (y < 0 || static_cast<std::size_t>(y) >= ds.class_count)
        throw ArtifactError((dir / "labels.bin").string(), "label out of range");
    return ds;
  } catch (const json::exception& e) {
    throw ArtifactError(manifest_path.string(), e.what());
  }
}

}  // namespace ufc::data
