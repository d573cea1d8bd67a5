// SPDX-License-Identifier: Apache-2.0
#include "ufc/distill/distill.hpp"

#include <cmath>
#include <cstdio>

#include "ufc/util/hash.hpp"
#include "ufc/util/parallel.hpp"

namespace ufc::distill {

std::size_t compute_K(std::size_t ipc, std::size_t classes, std::size_t compensators) {
  if (ipc < 1 || classes < 1 || compensators < 1) throw ContractError("compute_K: ipc, C and M must be >= 1");
  const std::size_t k = ipc * classes / (classes + compensators);
  if (k == 0) {
    throw BudgetError("budget too small: floor(" + std::to_string(ipc) + " * " + std::to_string(classes) + " / " +
                      std::to_string(classes + compensators) + ") = 0 subsets");
  }
  return k;
}

Tensor relabel(std::span<const nn::Model> ensemble, const Tensor& instances) {
  if (ensemble.empty()) throw ContractError("relabel: empty ensemble");
  const std::size_t n = instances.dim(0);
  const std::size_t c = ensemble.front().spec().class_count;
  std::vector<double> acc(n * c, 0.0);
  for (const auto& m : ensemble) {
    if (m.spec().class_count != c) throw ContractError("relabel: members disagree on class count");
    const Tensor logits = nn::forward_logits(m, instances);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += static_cast<double>(logits[i]);
  }
  std::vector<float> avg(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) avg[i] = static_cast<float>(acc[i] / static_cast<double>(ensemble.size()));
  diffcore::Tape<float> tape;
  return diffcore::softmax(tape.constant(Tensor({n, c}, std::move(avg)))).value();
}

Ensemble::Ensemble(std::vector<nn::Model> members) : members_(std::move(members)) {
  for (std::size_t a = 0; a < members_.size(); ++a)
    for (std::size_t b = a + 1; b < members_.size(); ++b)
      if (members_[a].spec().architecture == members_[b].spec().architecture)
        throw ContractError("ensemble: architecture " + nn::to_string(members_[a].spec().architecture) + " repeated");
}

std::vector<nn::ArchitectureId> Ensemble::architectures() const {
  std::vector<nn::ArchitectureId> out;
  for (const auto& m : members_) out.push_back(m.spec().architecture);
  return out;
}

Tensor Ensemble::relabel(const Tensor& instances) const {
  ++*queries_;
  return distill::relabel(members_, instances);
}

void DistilledDataset::validate() const {
  auto fail = [](const std::string& what) { throw ArtifactError("bundle", what); };
  for (std::size_t k = 0; k < subsets.size(); ++k) {
    const auto& s = subsets[k];
    const std::string at = "subset " + std::to_string(k) + ": ";
    if (s.anchors.instances.shape() != diffcore::Shape{C, dim}) fail(at + "anchor shape mismatch");
    if (s.anchors.labels.size() != C) fail(at + "anchor label count mismatch");
    for (std::size_t i = 0; i < C; ++i)
      if (s.anchors.labels[i] != static_cast<std::int32_t>(i)) fail(at + "anchors must be ordered by class");
    if (s.compensators.size() != M) fail(at + "compensator count mismatch");
    for (const auto& u : s.compensators)
      if (u.u.shape() != diffcore::Shape{dim}) fail(at + "compensator shape mismatch");
    if (s.static_labels.shape() != diffcore::Shape{C * M, C}) fail(at + "label matrix shape mismatch");
  }
}

std::string recipe_hash(const SynthesisRecipe& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "iter=%zu;lr=%.17g;b1=%.17g;b2=%.17g;eps=%.17g", r.iterations, r.lr, r.beta1, r.beta2,
                r.eps);
  return hash_hex(buf);
}

DistilledDataset distill(const data::LabeledDataset& train, const Ensemble& ensemble, const DistillParams& params) {
  train.validate();
  const std::size_t M = ensemble.size();
  if (M == 0) throw ContractError("distill: empty ensemble");
  const std::size_t C = train.class_count;
  const std::size_t K = compute_K(params.ipc, C, M);

  DistilledDataset out;
  out.M = M;
  out.C = C;
  out.dim = train.dim();
  out.ipc = params.ipc;
  out.provenance = {params.seed, params.alpha, params.recipe, ensemble.architectures(), params.config_hash};

  out.subsets.resize(K);
  for (std::size_t k = 0; k < K; ++k) out.subsets[k].anchors = data::sample_anchor_set(train, k, params.seed);

  std::vector<UFC> solved(K * M);
  parallel_for(K * M, params.threads, [&](std::size_t task) {
    const std::size_t k = task / M, j = task % M;
    try {
      solved[task] = optimize_ufc(ensemble.member(j), out.subsets[k].anchors, params.alpha, params.recipe);
    } catch (const DivergenceError& e) {
      throw DivergenceError("subset " + std::to_string(k) + ", compensator " + std::to_string(j) + ": " + e.detail(),
                            e.iteration());
    }
  });

  for (std::size_t k = 0; k < K; ++k) {
    auto& rec = out.subsets[k];
    rec.compensators.assign(solved.begin() + static_cast<std::ptrdiff_t>(k * M),
                            solved.begin() + static_cast<std::ptrdiff_t>((k + 1) * M));
    rec.static_labels = Tensor::zeros({C * M, C});
    for (std::size_t j = 0; j < M; ++j) {
      Tensor integrated = rec.anchors.instances;
      const auto& u = rec.compensators[j].u;
      for (std::size_t i = 0; i < C; ++i)
        for (std::size_t t = 0; t < out.dim; ++t) integrated.at(i, t) += u[t];
      const Tensor labels = ensemble.relabel(integrated);
      for (std::size_t i = 0; i < C; ++i) {
        const auto src = labels.row(i);
        auto dst = rec.static_labels.row(i * M + j);
        std::copy(src.begin(), src.end(), dst.begin());
      }
    }
  }
  return out;
}

}  // namespace ufc::distill
