// SPDX-License-Identifier: Apache-2.0
#include "ufc/nn/model_io.hpp"

#include <atomic>
#include <string>

#include "ufc/util/binary_io.hpp"

namespace ufc::nn {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {
std::atomic<std::size_t> g_loads{0};
}

std::size_t model_load_count() { return g_loads.load(); }

void save_model(const fs::path& dir, const Model& model, const json& meta) {
  fs::create_directories(dir);
  json m;
  m["format"] = "ufckit-model";
  m["version"] = 1;
  m["architecture_id"] = to_string(model.spec().architecture);
  m["input_dim"] = model.spec().input_dim;
  m["class_count"] = model.spec().class_count;
  m["bn_momentum"] = model.hidden().empty() ? 0.1f : model.hidden().front().bn.momentum;
  m["bn_eps"] = model.hidden().empty() ? 1e-5f : model.hidden().front().bn.eps;
  m["binary"] = "params.bin";

  std::vector<float> flat{model.input_mean(), model.input_std()};
  json entries = json::array();
  entries.push_back({{"name", "input.mean"}, {"shape", {1}}, {"offset", 0}});
  entries.push_back({{"name", "input.std"}, {"shape", {1}}, {"offset", 1}});
  for (const auto& [name, t] : model.named_tensors()) {
    entries.push_back({{"name", name}, {"shape", t->shape()}, {"offset", flat.size()}});
    flat.insert(flat.end(), t->data().begin(), t->data().end());
  }
  m["parameters"] = entries;
  m["float_count"] = flat.size();
  m["meta"] = meta;
  io::write_f32_le(dir / "params.bin", flat);
  io::write_text(dir / "manifest.json", m.dump(2) + "\n");
}

Model load_model(const fs::path& dir) {
  ++g_loads;
  const fs::path mp = dir / "manifest.json";
  try {
    const json m = json::parse(io::read_text(mp));
    if (m.at("format") != "ufckit-model") throw ArtifactError(mp.string(), "not a model manifest");
    ModelSpec spec;
    spec.architecture = parse_architecture(m.at("architecture_id").get<std::string>());
    spec.input_dim = m.at("input_dim").get<std::size_t>();
    spec.class_count = m.at("class_count").get<std::size_t>();
    Model model(spec);
    const auto momentum = m.at("bn_momentum").get<float>();
    const auto eps = m.at("bn_eps").get<float>();
    for (auto& l : model.hidden()) {
      l.bn.momentum = momentum;
      l.bn.eps = eps;
    }
    const auto total = m.at("float_count").get<std::size_t>();
    const auto flat = io::read_f32_le(dir / m.at("binary").get<std::string>(), total);

    auto named = model.named_tensors();
    const auto& entries = m.at("parameters");
    if (entries.size() != named.size() + 2) throw ArtifactError(mp.string(), "parameter table does not match architecture");
    auto take = [&](const json& e, const std::string& name, std::size_t count) {
      if (e.at("name").get<std::string>() != name) throw ArtifactError(mp.string(), "expected entry " + name);
      const auto off = e.at("offset").get<std::size_t>();
      if (off + count > flat.size()) throw ArtifactError(mp.string(), name + " overruns params.bin");
      return off;
    };
    model.set_input_normalization(flat[take(entries[0], "input.mean", 1)], flat[take(entries[1], "input.std", 1)]);
    for (std::size_t i = 0; i < named.size(); ++i) {
      auto& [name, t] = named[i];
      const auto& e = entries[i + 2];
      if (e.at("shape").get<diffcore::Shape>() != t->shape()) throw ArtifactError(mp.string(), name + " has wrong shape");
      const auto off = take(e, name, t->size());
      std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
                flat.begin() + static_cast<std::ptrdiff_t>(off + t->size()), t->vec().begin());
    }
    return model;
  } catch (const json::exception& e) {
    throw ArtifactError(mp.string(), e.what());
  } catch (const ConfigError& e) {
    throw ArtifactError(mp.string(), e.what());
  }
}

}  // namespace ufc::nn
