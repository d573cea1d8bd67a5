// SPDX-License-Identifier: Apache-2.0
#include "ufc/metrics/analysis.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <string>

#include "ufc/util/binary_io.hpp"

namespace ufc::metrics {

DuplicationReport duplication_of_features(const Tensor& features, std::span<const std::int32_t> labels,
                                          std::size_t class_count) {
  if (features.rank() != 2 || features.dim(0) != labels.size()) {
    throw DimensionError("feature_duplication: feature rows and labels disagree");
  }
  const std::size_t n = labels.size(), w = features.dim(1);
  std::vector<double> norms(n);
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (float v : features.row(r)) s += static_cast<double>(v) * v;
    norms[r] = std::sqrt(s);
  }
  DuplicationReport out;
  out.per_class.assign(class_count, std::numeric_limits<double>::quiet_NaN());
  std::vector<std::vector<std::size_t>> rows(class_count);
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= class_count) {
      throw ContractError("feature_duplication: label out of range");
    }
    if (norms[r] == 0.0) {
      ++out.excluded;
      continue;
    }
    rows[static_cast<std::size_t>(labels[r])].push_back(r);
  }
  double total = 0.0;
  std::size_t measured = 0;
  for (std::size_t c = 0; c < class_count; ++c) {
    const auto& idx = rows[c];
    if (idx.size() < 2) continue;
    double acc = 0.0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < idx.size(); ++a) {
      for (std::size_t b = a + 1; b < idx.size(); ++b) {
        const auto fa = features.row(idx[a]), fb = features.row(idx[b]);
        double dot = 0.0;
        for (std::size_t t = 0; t < w; ++t) dot += static_cast<double>(fa[t]) * fb[t];
        acc += dot / (norms[idx[a]] * norms[idx[b]]);
        ++pairs;
      }
    }
    out.per_class[c] = acc / static_cast<double>(pairs);
    total += out.per_class[c];
    ++measured;
  }
  if (measured == 0) throw ContractError("feature_duplication: no class has two usable instances");
  out.mean = total / static_cast<double>(measured);
  return out;
}

DuplicationReport feature_duplication(const nn::Model& probe, const Tensor& instances,
                                      std::span<const std::int32_t> labels, std::size_t class_count) {
  return duplication_of_features(nn::penultimate_features(probe, instances), labels, class_count);
}

namespace {

std::vector<double> unit(const Tensor& t) {
  double s = 0.0;
  for (float v : t.data()) s += static_cast<double>(v) * v;
  const double n = std::sqrt(s);
  if (!(n > 0.0)) throw ContractError("loss_landscape_grid: zero direction");
  std::vector<double> out;
  for (float v : t.data()) out.push_back(v / n);
  return out;
}

}  // namespace

Tensor loss_landscape_grid(const nn::Model& model, const Tensor& anchor, std::int32_t label, const Tensor& dir_u,
                           const Tensor& dir_v, double extent, std::size_t resolution) {
  const std::size_t d = anchor.size();
  if (dir_u.size() != d || dir_v.size() != d) throw DimensionError("loss_landscape_grid: direction size mismatch");
  if (resolution == 0) throw ContractError("loss_landscape_grid: resolution must be >= 1");
  const auto u = unit(dir_u), v = unit(dir_v);
  double cosine = 0.0;
  for (std::size_t t = 0; t < d; ++t) cosine += u[t] * v[t];
  if (std::abs(cosine) > 1.0 - 1e-6) throw ContractError("loss_landscape_grid: directions are linearly dependent");

  auto coord = [&](std::size_t i) {
    return resolution == 1 ? 0.0 : -extent + 2.0 * extent * static_cast<double>(i) / static_cast<double>(resolution - 1);
  };
  Tensor batch = Tensor::zeros({resolution * resolution, d});
  for (std::size_t i = 0; i < resolution; ++i) {
    for (std::size_t j = 0; j < resolution; ++j) {
      const double a = coord(i), b = coord(j);
      auto row = batch.row(i * resolution + j);
      for (std::size_t t = 0; t < d; ++t) row[t] = static_cast<float>(anchor[t] + a * u[t] + b * v[t]);
    }
  }
  const Tensor logits = nn::forward_logits(model, batch);
  const std::size_t C = logits.dim(1);
  if (label < 0 || static_cast<std::size_t>(label) >= C) throw ContractError("loss_landscape_grid: label out of range");
  Tensor grid = Tensor::zeros({resolution, resolution});
  for (std::size_t r = 0; r < resolution * resolution; ++r) {
    const auto z = logits.row(r);
    double mx = -std::numeric_limits<double>::infinity();
    for (float x : z) mx = std::max(mx, static_cast<double>(x));
    double s = 0.0;
    for (float x : z) s += std::exp(static_cast<double>(x) - mx);
    grid[r] = static_cast<float>(mx + std::log(s) - static_cast<double>(z[static_cast<std::size_t>(label)]));
  }
  return grid;
}

void write_grid_csv(const std::filesystem::path& path, const Tensor& grid) {
  std::string out;
  char buf[32];
  for (std::size_t i = 0; i < grid.dim(0); ++i) {
    for (std::size_t j = 0; j < grid.dim(1); ++j) {
      std::snprintf(buf, sizeof buf, "%s%.9g", j ? "," : "", static_cast<double>(grid.at(i, j)));
      out += buf;
    }
    out += '\n';
  }
  io::write_text(path, out);
}

std::vector<LinearityGap> label_linearity_gap(const distill::Ensemble& ensemble, const Tensor& instances,
                                              std::span<const std::pair<std::size_t, std::size_t>> pairs,
                                              std::span<const double> lambdas) {
  const std::size_t n = pairs.size(), d = instances.dim(1);
  Tensor xa = Tensor::zeros({n, d}), xb = Tensor::zeros({n, d});
  for (std::size_t p = 0; p < n; ++p) {
    const auto [a, b] = pairs[p];
    if (a >= instances.dim(0) || b >= instances.dim(0)) throw ContractError("label_linearity_gap: pair index out of range");
    std::copy(instances.row(a).begin(), instances.row(a).end(), xa.row(p).begin());
    std::copy(instances.row(b).begin(), instances.row(b).end(), xb.row(p).begin());
  }
  std::vector<LinearityGap> out;
  if (n == 0) {
    for (double l : lambdas) out.push_back({l, 0.0, 0.0});
    return out;
  }
  const Tensor ya = ensemble.relabel(xa), yb = ensemble.relabel(xb);
  const std::size_t C = ya.dim(1);
  for (double l : lambdas) {
    if (!(l >= 0.0 && l <= 1.0)) throw ContractError("label_linearity_gap: lambda outside [0, 1]");
    Tensor mixed = Tensor::zeros({n, d});
    for (std::size_t i = 0; i < mixed.size(); ++i) {
      mixed[i] = static_cast<float>(l * static_cast<double>(xa[i]) + (1.0 - l) * static_cast<double>(xb[i]));
    }
    const Tensor ym = ensemble.relabel(mixed);
    LinearityGap g;
    g.lambda = l;
    for (std::size_t p = 0; p < n; ++p) {
      double acc = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const double lin = l * static_cast<double>(ya.at(p, c)) + (1.0 - l) * static_cast<double>(yb.at(p, c));
        acc += std::abs(static_cast<double>(ym.at(p, c)) - lin);
      }
      acc /= static_cast<double>(C);
      g.mean_gap += acc;
      g.max_gap = std::max(g.max_gap, acc);
    }
    g.mean_gap /= static_cast<double>(n);
    out.push_back(g);
  }
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> sample_pairs(std::size_t n, std::size_t count, Rng& rng) {
  if (n < 2) throw ContractError("sample_pairs: need at least two rows");
  std::vector<std::pair<std::size_t, std::size_t>> out;
  while (out.size() < count) {
    const std::size_t a = uniform_index(rng, n), b = uniform_index(rng, n);
    if (a != b) out.emplace_back(a, b);
  }
  return out;
}

void export_penultimate_features(const nn::Model& model, const data::LabeledDataset& dataset,
                                 const std::filesystem::path& path) {
  const std::size_t w = model.feature_dim();
  std::string out = "label";
  for (std::size_t t = 0; t < w; ++t) out += ",f" + std::to_string(t);
  out += '\n';
  if (dataset.size() > 0) {
    const Tensor f = nn::penultimate_features(model, dataset.instances);
    char buf[32];
    for (std::size_t r = 0; r < dataset.size(); ++r) {
      out += std::to_string(dataset.labels[r]);
      for (float v : f.row(r)) {
        std::snprintf(buf, sizeof buf, ",%.9g", static_cast<double>(v));
        out += buf;
      }
      out += '\n';
    }
  }
  io::write_text(path, out);
}

}  // namespace ufc::metrics
