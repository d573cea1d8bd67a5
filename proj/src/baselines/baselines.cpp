// SPDX-License-Identifier: Apache-2.0
#include "ufc/baselines/baselines.hpp"

#include <cmath>
#include <limits>

#include "ufc/distill/bundle_io.hpp"
#include "ufc/distill/synthesis.hpp"
#include "ufc/nn/optim.hpp"
#include "ufc/util/parallel.hpp"
#include "ufc/util/rng.hpp"

namespace ufc::baselines {
using nlohmann::json;

std::string to_string(BaselineKind kind) { return kind == BaselineKind::Coreset ? "coreset" : "class_specific"; }

BnBatch parse_bn_batch(const std::string& name) {
  if (name == "slot") return BnBatch::Slot;
  if (name == "class") return BnBatch::Class;
  throw ConfigError("unknown bn_batch '" + name + "' (expected slot or class)");
}

InitMode parse_init_mode(const std::string& name) {
  if (name == "real") return InitMode::Real;
  if (name == "noise") return InitMode::Noise;
  throw ConfigError("unknown init mode '" + name + "' (expected real or noise)");
}

void BaselineSet::validate() const {
  auto fail = [](const std::string& what) { throw ArtifactError("baseline", what); };
  const std::size_t n = ipc * C;
  if (classes.size() != n) fail("instance count is not ipc * C");
  if (instances.shape() != diffcore::Shape{n, dim}) fail("instance matrix shape mismatch");
  if (labels.shape() != diffcore::Shape{n, C}) fail("label matrix shape mismatch");
  if (source_indices.size() != n) fail("source index count mismatch");
  for (std::size_t r = 0; r < n; ++r)
    if (classes[r] != static_cast<std::int32_t>(r / ipc)) fail("rows must be grouped by class");
}

std::vector<std::size_t> coreset_indices(const data::LabeledDataset& dataset, std::size_t ipc, std::uint64_t seed) {
  if (ipc == 0) throw ContractError("coreset: ipc must be >= 1");
  const auto by_class = dataset.indices_by_class();
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    if (by_class[c].size() < ipc) {
      throw BudgetError("class " + std::to_string(c) + " has " + std::to_string(by_class[c].size()) +
                        " instances, fewer than ipc = " + std::to_string(ipc));
    }
    Rng rng = make_rng(seed, 60000 + c);
    const auto perm = permutation(by_class[c].size(), rng);
    for (std::size_t s = 0; s < ipc; ++s) out.push_back(by_class[c][perm[s]]);
  }
  return out;
}

namespace {

BaselineSet from_indices(const data::LabeledDataset& dataset, std::size_t ipc, std::vector<std::size_t> idx) {
  BaselineSet out;
  out.ipc = ipc;
  out.C = dataset.class_count;
  out.dim = dataset.dim();
  out.precision_bits = dataset.precision_bits;
  const auto sub = dataset.subset(idx);
  out.instances = sub.instances;
  out.labels = sub.one_hot();
  out.classes = sub.labels;
  out.source_indices = std::move(idx);
  return out;
}

/// -log softmax(row)[y], in double.
float row_ce(std::span<const float> logits, std::size_t y) {
  double mx = -std::numeric_limits<double>::infinity();
  for (float v : logits) mx = std::max(mx, static_cast<double>(v));
  double s = 0.0;
  for (float v : logits) s += std::exp(static_cast<double>(v) - mx);
  return static_cast<float>(mx + std::log(s) - static_cast<double>(logits[y]));
}

struct GroupResult {
  Tensor images;
  std::vector<float> initial_ce, final_ce;
};

/// Optimizes the rows of `init` jointly; row r targets one-hot(classes[r]).
GroupResult synthesize_group(const nn::Model& teacher, Tensor init, const std::vector<std::size_t>& classes,
                             const ClassSpecificParams& p, const std::string& where) {
  const std::size_t n = init.dim(0);
  const std::size_t C = teacher.spec().class_count;
  Tensor targets = Tensor::zeros({n, C});
  for (std::size_t r = 0; r < n; ++r) targets.at(r, classes[r]) = 1.0f;

  Tensor s = std::move(init);
  GroupResult out;
  out.images = s;
  std::vector<float> best_obj;
  nn::Adam adam({p.recipe.beta1, p.recipe.beta2, p.recipe.eps, 0.0, false});
  const nn::CosineSchedule schedule{p.recipe.lr, p.recipe.iterations};

  for (std::size_t it = 0; it <= p.recipe.iterations; ++it) {
    diffcore::Tape<float> tape;
    const auto sv = tape.variable(s);
    float obj = 0.0f;
    Tensor grad, logits;
    try {
      const auto terms = distill::synthesis_objective(teacher, sv, targets, p.alpha);
      obj = terms.total.value().item();
      logits = terms.logits.value();
      if (it < p.recipe.iterations) grad = diffcore::backward(tape, terms.total)[sv];
    } catch (const NumericError& e) {
      throw DivergenceError(where + ": " + e.what(), it);
    }
    if (it == 0) {
      out.initial_ce.resize(n);
      for (std::size_t r = 0; r < n; ++r) out.initial_ce[r] = row_ce(logits.row(r), classes[r]);
      out.final_ce = out.initial_ce;
      best_obj.assign(n, std::numeric_limits<float>::infinity());
    }
    for (std::size_t r = 0; r < n; ++r) {
      const float ce = row_ce(logits.row(r), classes[r]);
      if (ce <= out.initial_ce[r] && obj < best_obj[r]) {
        best_obj[r] = obj;
        out.final_ce[r] = ce;
        std::copy(s.row(r).begin(), s.row(r).end(), out.images.row(r).begin());
      }
    }
    if (it == p.recipe.iterations) break;
    Tensor* ptr = &s;
    adam.step(std::span<Tensor* const>(&ptr, 1), std::span<const Tensor>(&grad, 1), schedule.at(it));
    if (!s.all_finite()) throw DivergenceError(where + ": image became non-finite", it);
  }
  return out;
}

}  // namespace

BaselineSet random_coreset(const data::LabeledDataset& dataset, std::size_t ipc, std::uint64_t seed) {
  dataset.validate();
  BaselineSet out = from_indices(dataset, ipc, coreset_indices(dataset, ipc, seed));
  out.kind = BaselineKind::Coreset;
  out.provenance = {{"seed", seed}};
  return out;
}

void relabel_with(BaselineSet& set, const distill::Ensemble& ensemble) {
  if (set.size() > 0) set.labels = ensemble.relabel(set.instances);
  set.label_source = "ensemble";
  json archs = json::array();
  for (auto a : ensemble.architectures()) archs.push_back(nn::to_string(a));
  set.provenance["label_ensemble"] = archs;
}

BaselineSet class_specific_synthesis(const data::LabeledDataset& dataset, const nn::Model& teacher,
                                     const distill::Ensemble& ensemble, const ClassSpecificParams& p) {
  dataset.validate();
  if (p.batch == BnBatch::Class && p.ipc < 2) {
    throw ContractError("class-specific synthesis with per-class batches needs ipc >= 2");
  }
  if (teacher.spec().input_dim != dataset.dim() || teacher.spec().class_count != dataset.class_count) {
    throw ContractError("class-specific synthesis: teacher does not match dataset");
  }
  BaselineSet out = from_indices(dataset, p.ipc, coreset_indices(dataset, p.ipc, p.seed));
  out.kind = BaselineKind::ClassSpecific;
  const std::size_t C = out.C, d = out.dim, ipc = p.ipc;
  if (p.init == InitMode::Noise) {
    for (std::size_t c = 0; c < C; ++c) {
      Rng rng = make_rng(p.seed, 70000 + c);
      for (std::size_t r = c * ipc; r < (c + 1) * ipc; ++r)
        for (float& v : out.instances.row(r)) v = static_cast<float>(uniform01(rng));
    }
  }

  // Group g holds the rows optimized together; rows stay in class-major order.
  const bool by_slot = p.batch == BnBatch::Slot;
  const std::size_t groups = by_slot ? ipc : C, width = by_slot ? C : ipc;
  auto row_of = [&](std::size_t g, std::size_t m) { return by_slot ? m * ipc + g : g * ipc + m; };
  std::vector<GroupResult> results(groups);
  parallel_for(groups, p.threads, [&](std::size_t g) {
    Tensor init = Tensor::zeros({width, d});
    std::vector<std::size_t> classes(width);
    for (std::size_t m = 0; m < width; ++m) {
      const std::size_t r = row_of(g, m);
      classes[m] = r / ipc;
      std::copy(out.instances.row(r).begin(), out.instances.row(r).end(), init.row(m).begin());
    }
    const std::string where = by_slot ? "slot " + std::to_string(g) + " (all classes)" : "class " + std::to_string(g) + " (all slots)";
    results[g] = synthesize_group(teacher, std::move(init), classes, p, where);
  });
  out.initial_ce.assign(C * ipc, 0.0f);
  out.final_ce.assign(C * ipc, 0.0f);
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t m = 0; m < width; ++m) {
      const std::size_t r = row_of(g, m);
      const auto src = results[g].images.row(m);
      std::copy(src.begin(), src.end(), out.instances.row(r).begin());
      out.initial_ce[r] = results[g].initial_ce[m];
      out.final_ce[r] = results[g].final_ce[m];
    }
  }
  const auto& r = p.recipe;
  out.provenance = {{"seed", p.seed},
                    {"alpha", p.alpha},
                    {"init", p.init == InitMode::Real ? "real" : "noise"},
                    {"bn_batch", by_slot ? "slot" : "class"},
                    {"teacher", nn::to_string(teacher.spec().architecture)},
                    {"recipe", {{"iterations", r.iterations}, {"lr", r.lr}, {"beta1", r.beta1}, {"beta2", r.beta2}, {"eps", r.eps}}},
                    {"recipe_hash", distill::recipe_hash(r)}};
  relabel_with(out, ensemble);
  return out;
}

student::TrainingSet to_training_set(const BaselineSet& set) {
  set.validate();
  student::TrainingSet t;
  t.instances = set.instances;
  t.labels = set.labels;
  for (std::size_t r = 0; r < set.size(); ++r) t.origins.push_back({0, r, 0});
  return t;
}

json baseline_manifest(const BaselineSet& s) {
  json m;
  m["format"] = "ufckit-bundle";
  m["version"] = 1;
  m["kind"] = to_string(s.kind);
  m["ipc"] = s.ipc;
  m["C"] = s.C;
  m["dim"] = s.dim;
  m["precision_bits"] = s.precision_bits;
  m["label_source"] = s.label_source;
  m["source_indices"] = s.source_indices;
  m["provenance"] = s.provenance;
  if (s.kind == BaselineKind::ClassSpecific) m["ce"] = {{"initial", s.initial_ce}, {"final", s.final_ce}};
  return m;
}

void save_baseline(const std::filesystem::path& dir, const BaselineSet& set) {
  set.validate();
  distill::BundlePayload p;
  p.images = set.instances.vec();
  p.labels = set.labels.vec();
  distill::write_bundle(dir, baseline_manifest(set), p);
}

BaselineSet load_baseline(const std::filesystem::path& dir) {
  const auto mp = (dir / distill::kManifestFile).string();
  const json m = distill::read_bundle_manifest(dir);
  try {
    BaselineSet s;
    const std::string kind = m.at("kind").get<std::string>();
    if (kind == "coreset") {
      s.kind = BaselineKind::Coreset;
    } else if (kind == "class_specific") {
      s.kind = BaselineKind::ClassSpecific;
    } else {
      throw ArtifactError(mp, "bundle kind '" + kind + "' is not a baseline");
    }
    s.ipc = m.at("ipc").get<std::size_t>();
    s.C = m.at("C").get<std::size_t>();
    s.dim = m.at("dim").get<std::size_t>();
    s.precision_bits = m.at("precision_bits").get<std::uint32_t>();
    s.label_source = m.at("label_source").get<std::string>();
    s.source_indices = m.at("source_indices").get<std::vector<std::size_t>>();
    s.provenance = m.at("provenance");
    if (m.contains("ce")) {
      s.initial_ce = m.at("ce").at("initial").get<std::vector<float>>();
      s.final_ce = m.at("ce").at("final").get<std::vector<float>>();
    }
    const auto p = distill::read_bundle_payload(dir, m);
    const std::size_t n = s.ipc * s.C;
    if (p.images.size() != n * s.dim || p.labels.size() != n * s.C || !p.compensators.empty()) {
      throw ArtifactError(mp, "payload sizes disagree with ipc, C, dim");
    }
    s.instances = Tensor({n, s.dim}, p.images);
    s.labels = Tensor({n, s.C}, p.labels);
    for (std::size_t r = 0; r < n; ++r) s.classes.push_back(static_cast<std::int32_t>(r / s.ipc));
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw ArtifactError(mp, e.what());
  } catch (const ArtifactError& e) {
    if (e.path() == "baseline") throw ArtifactError(mp, e.what());
    throw;
  }
}

}  // namespace ufc::baselines
