// SPDX-License-Identifier: Apache-2.0
#include "ufc/distill/bundle_io.hpp"

#include "ufc/util/binary_io.hpp"

namespace ufc::distill {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json with_files(json manifest, const BundlePayload& p) {
  manifest["files"] = {
      {"images", {{"name", kImagesFile}, {"count", p.images.size()}}},
      {"compensators", {{"name", kCompensatorsFile}, {"count", p.compensators.size()}}},
      {"labels", {{"name", kLabelsFile}, {"count", p.labels.size()}}},
  };
  return manifest;
}

}  // namespace

std::string manifest_text(json manifest, const BundlePayload& payload) {
  return with_files(std::move(manifest), payload).dump(2) + "\n";
}

void write_bundle(const fs::path& dir, json manifest, const BundlePayload& payload) {
  fs::create_directories(dir);
  io::write_f32_le(dir / kImagesFile, payload.images);
  io::write_f32_le(dir / kCompensatorsFile, payload.compensators);
  io::write_f32_le(dir / kLabelsFile, payload.labels);
  io::write_text(dir / kManifestFile, manifest_text(std::move(manifest), payload));
}

json read_bundle_manifest(const fs::path& dir) {
  const fs::path mp = dir / kManifestFile;
  try {
    json m = json::parse(io::read_text(mp));
    if (m.at("format") != "ufckit-bundle") throw ArtifactError(mp.string(), "not a bundle manifest");
    return m;
  } catch (const json::exception& e) {
    throw ArtifactError(mp.string(), e.what());
  }
}

BundlePayload read_bundle_payload(const fs::path& dir, const json& m) {
  try {
    const auto& f = m.at("files");
    BundlePayload p;
    p.images = io::read_f32_le(dir / f.at("images").at("name").get<std::string>(), f.at("images").at("count").get<std::size_t>());
    p.compensators = io::read_f32_le(dir / f.at("compensators").at("name").get<std::string>(),
                                     f.at("compensators").at("count").get<std::size_t>());
    p.labels = io::read_f32_le(dir / f.at("labels").at("name").get<std::string>(), f.at("labels").at("count").get<std::size_t>());
    return p;
  } catch (const json::exception& e) {
    throw ArtifactError((dir / kManifestFile).string(), e.what());
  }
}

std::string bundle_kind(const fs::path& dir) {
  const json m = read_bundle_manifest(dir);
  try {
    return m.at("kind").get<std::string>();
  } catch (const json::exception& e) {
    throw ArtifactError((dir / kManifestFile).string(), e.what());
  }
}

json bundle_manifest(const DistilledDataset& b) {
  json m;
  m["format"] = "ufckit-bundle";
  m["version"] = 1;
  m["kind"] = "infer";
  m["K"] = b.K();
  m["M"] = b.M;
  m["C"] = b.C;
  m["dim"] = b.dim;
  m["ipc"] = b.ipc;
  m["precision_bits"] = b.precision_bits;
  m["seed"] = b.provenance.seed;
  m["alpha"] = b.provenance.alpha;
  const auto& r = b.provenance.recipe;
  m["recipe"] = {{"iterations", r.iterations}, {"lr", r.lr}, {"beta1", r.beta1}, {"beta2", r.beta2}, {"eps", r.eps}};
  m["recipe_hash"] = recipe_hash(r);
  json archs = json::array();
  for (auto a : b.provenance.architectures) archs.push_back(nn::to_string(a));
  m["architectures"] = archs;
  m["config_hash"] = b.provenance.config_hash;
  json sources = json::array(), objectives = json::array(), against = json::array();
  for (const auto& s : b.subsets) {
    sources.push_back(s.anchors.source_indices);
    json obj = json::array(), arch = json::array();
    for (const auto& u : s.compensators) {
      obj.push_back({u.initial_objective, u.final_objective});
      arch.push_back(nn::to_string(u.optimized_against));
    }
    objectives.push_back(obj);
    against.push_back(arch);
  }
  m["anchor_sources"] = sources;
  m["objectives"] = objectives;
  m["optimized_against"] = against;
  return m;
}

BundlePayload bundle_payload(const DistilledDataset& b) {
  BundlePayload p;
  for (const auto& s : b.subsets) {
    p.images.insert(p.images.end(), s.anchors.instances.data().begin(), s.anchors.instances.data().end());
    for (const auto& u : s.compensators) p.compensators.insert(p.compensators.end(), u.u.data().begin(), u.u.data().end());
    p.labels.insert(p.labels.end(), s.static_labels.data().begin(), s.static_labels.data().end());
  }
  return p;
}

void save_bundle(const fs::path& dir, const DistilledDataset& bundle) {
  bundle.validate();
  write_bundle(dir, bundle_manifest(bundle), bundle_payload(bundle));
}

DistilledDataset load_bundle(const fs::path& dir) {
  const fs::path mp = dir / kManifestFile;
  const json m = read_bundle_manifest(dir);
  try {
    if (m.at("kind") != "infer") throw ArtifactError(mp.string(), "bundle kind is not 'infer'");
    DistilledDataset b;
    const auto K = m.at("K").get<std::size_t>();
    b.M = m.at("M").get<std::size_t>();
    b.C = m.at("C").get<std::size_t>();
    b.dim = m.at("dim").get<std::size_t>();
    b.ipc = m.at("ipc").get<std::size_t>();
    b.precision_bits = m.at("precision_bits").get<std::uint32_t>();
    b.provenance.seed = m.at("seed").get<std::uint64_t>();
    b.provenance.alpha = m.at("alpha").get<double>();
    const auto& r = m.at("recipe");
    b.provenance.recipe = {r.at("iterations").get<std::size_t>(), r.at("lr").get<double>(), r.at("beta1").get<double>(),
                           r.at("beta2").get<double>(), r.at("eps").get<double>()};
    for (const auto& a : m.at("architectures")) b.provenance.architectures.push_back(nn::parse_architecture(a.get<std::string>()));
    b.provenance.config_hash = m.at("config_hash").get<std::string>();

    const BundlePayload p = read_bundle_payload(dir, m);
    const std::size_t C = b.C, M = b.M, d = b.dim;
    if (p.images.size() != K * C * d || p.compensators.size() != K * M * d || p.labels.size() != K * C * M * C) {
      throw ArtifactError(mp.string(), "payload sizes disagree with K, M, C, dim");
    }
    const auto& sources = m.at("anchor_sources");
    const auto& objectives = m.at("objectives");
    const auto& against = m.at("optimized_against");
    b.subsets.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
      auto& s = b.subsets[k];
      s.anchors.instances = Tensor({C, d}, std::vector<float>(p.images.begin() + static_cast<std::ptrdiff_t>(k * C * d),
                                                              p.images.begin() + static_cast<std::ptrdiff_t>((k + 1) * C * d)));
      for (std::size_t i = 0; i < C; ++i) s.anchors.labels.push_back(static_cast<std::int32_t>(i));
      s.anchors.source_indices = sources.at(k).get<std::vector<std::size_t>>();
      for (std::size_t j = 0; j < M; ++j) {
        UFC u;
        const std::size_t off = (k * M + j) * d;
        u.u = Tensor({d}, std::vector<float>(p.compensators.begin() + static_cast<std::ptrdiff_t>(off),
                                             p.compensators.begin() + static_cast<std::ptrdiff_t>(off + d)));
        u.initial_objective = objectives.at(k).at(j).at(0).get<float>();
        u.final_objective = objectives.at(k).at(j).at(1).get<float>();
        u.optimized_against = nn::parse_architecture(against.at(k).at(j).get<std::string>());
        s.compensators.push_back(std::move(u));
      }
      const std::size_t lo = k * C * M * C;
      s.static_labels = Tensor({C * M, C}, std::vector<float>(p.labels.begin() + static_cast<std::ptrdiff_t>(lo),
                                                              p.labels.begin() + static_cast<std::ptrdiff_t>(lo + C * M * C)));
    }
    b.validate();
    return b;
  } catch (const json::exception& e) {
    throw ArtifactError(mp.string(), e.what());
  } catch (const ConfigError& e) {
    throw ArtifactError(mp.string(), e.what());
  } catch (const ArtifactError& e) {
    if (e.path() == "bundle") throw ArtifactError(mp.string(), e.what());
    throw;
  }
}

}  // namespace ufc::distill
