// SPDX-License-Identifier: Apache-2.0
#include "ufc/cli/config.hpp"

#include "ufc/util/binary_io.hpp"
#include "ufc/util/hash.hpp"

namespace ufc::cli {

json default_config() {
  return {
      {"dataset", {{"classes", 10}, {"dim", 64}, {"n_per_class", 200}, {"spread", 0.3}, {"seed", 1}}},
      {"teachers",
       {{"architectures", {"A1", "A2", "A3", "A4"}},
        {"epochs", 100},
        {"batch_size", 64},
        {"lr", 0.05},
        {"momentum", 0.9},
        {"weight_decay", 0.0},
        {"target_accuracy", 0.95},
        {"seed", 7}}},
      {"distill",
       {{"ipc", 10}, {"alpha", 0.01}, {"iterations", 1000}, {"lr", 0.25}, {"beta1", 0.5}, {"beta2", 0.9}, {"eps", 1e-8}, {"seed", 11}}},
      {"baseline", {{"kind", "coreset"}, {"ipc", 10}, {"init", "real"}, {"bn_batch", "slot"}, {"coreset_labels", "onehot"}, {"teacher", "A1"}, {"seed", 11}}},
      {"student",
       {{"architecture", "A1"},
        {"mode", "static"},
        {"source", "infer"},
        {"epochs", 100},
        {"batch_size", 64},
        {"lr", 0.001},
        {"weight_decay", 0.01},
        {"mixup_beta", 1.0},
        {"use_mixup", true},
        {"seed", 21}}},
      {"metrics",
       {{"probe", "A1"},
        {"landscape_extent", 1.0},
        {"landscape_resolution", 21},
        {"linearity_pairs", 100},
        {"linearity_lambdas", {0.25, 0.5, 0.75}},
        {"seed", 5}}},
      {"compare", {{"seeds", 3}, {"max_ipc", 200}}},
      {"output", {{"dir", "runs/default"}}},
      {"threads", 1},
  };
}

namespace {

void merge_into(json& base, const json& over, const std::string& where) {
  if (!over.is_object()) throw ConfigError(where.empty() ? "config must be a JSON object" : where + " must be an object");
  for (const auto& [key, value] : over.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    json& slot = base[key];
    if (slot.is_object()) {
      merge_into(slot, value, path);
      continue;
    }
    const bool number_ok = slot.is_number() && value.is_number();
    const bool integer_slot = slot.is_number_integer();
    if (!(number_ok || slot.type() == value.type())) {
      throw ConfigError("config key '" + path + "' expects " + std::string(slot.type_name()) + ", got " +
                        value.type_name());
    }
    if (integer_slot && !value.is_number_integer()) throw ConfigError("config key '" + path + "' expects an integer");
    if (integer_slot && value.is_number_integer() && value.get<std::int64_t>() < 0) {
      throw ConfigError("config key '" + path + "' must be non-negative");
    }
    slot = value;
  }
}

template <class T>
T get(const json& config, const char* section, const char* key) {
  try {
    return config.at(section).at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config ") + section + "." + key + ": " + e.what());
  }
}

}  // namespace

json merge_config(const json& overrides) {
  json cfg = default_config();
  merge_into(cfg, overrides, "");
  return cfg;
}

void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json patch = value;
  std::string rest = key;
  std::vector<std::string> parts;
  for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1)) parts.push_back(rest.substr(0, pos));
  parts.push_back(rest);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
  merge_into(config, patch, "");
}

json load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  json file = json::object();
  if (!path.empty()) {
    std::string text;
    try {
      text = io::read_text(path);
    } catch (const ArtifactError& e) {
      throw ConfigError(e.what());
    }
    try {
      file = json::parse(text);
    } catch (const json::exception& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
  }
  json cfg = merge_config(file);
  for (const auto& o : overrides) apply_override(cfg, o);
  return cfg;
}

std::string section_hash(const json& config, const std::string& section) {
  return hash_hex(config.at(section).dump());
}

json stage_hashes(const json& config, const std::string& stage) {
  static const std::vector<std::pair<std::string, std::vector<std::string>>> deps{
      {"dataset", {"dataset"}},
      {"teachers", {"dataset", "teachers"}},
      {"distill", {"dataset", "teachers", "distill"}},
      {"baseline", {"dataset", "teachers", "distill", "baseline"}},
      {"student", {"dataset", "teachers", "distill", "baseline", "student"}},
      {"metrics", {"dataset", "teachers", "distill", "baseline", "metrics"}},
      {"compare", {"dataset", "teachers", "distill", "baseline", "student", "compare"}},
  };
  for (const auto& [name, sections] : deps) {
    if (name != stage) continue;
    json out = json::object();
    for (const auto& s : sections) out[s] = section_hash(config, s);
    return out;
  }
  throw ContractError("unknown stage '" + stage + "'");
}

data::ToyParams dataset_params(const json& c) {
  data::ToyParams p;
  p.classes = get<std::size_t>(c, "dataset", "classes");
  p.dim = get<std::size_t>(c, "dataset", "dim");
  p.n_per_class = get<std::size_t>(c, "dataset", "n_per_class");
  p.spread = get<double>(c, "dataset", "spread");
  p.seed = get<std::uint64_t>(c, "dataset", "seed");
  if (p.classes < 2 || p.dim < 2 || p.n_per_class < 4) throw ConfigError("dataset: need classes >= 2, dim >= 2, n_per_class >= 4");
  if (!(p.spread >= 0.0)) throw ConfigError("dataset.spread must be >= 0");
  return p;
}

std::vector<nn::ArchitectureId> teacher_architectures(const json& c) {
  std::vector<nn::ArchitectureId> out;
  for (const auto& name : get<std::vector<std::string>>(c, "teachers", "architectures")) {
    const auto a = nn::parse_architecture(name);
    for (auto b : out)
      if (a == b) throw ConfigError("teachers.architectures repeats " + name);
    out.push_back(a);
  }
  if (out.empty()) throw ConfigError("teachers.architectures is empty");
  return out;
}

nn::TeacherRecipe teacher_recipe(const json& c) {
  nn::TeacherRecipe r;
  r.epochs = get<std::size_t>(c, "teachers", "epochs");
  r.batch_size = get<std::size_t>(c, "teachers", "batch_size");
  r.lr = get<double>(c, "teachers", "lr");
  r.momentum = get<double>(c, "teachers", "momentum");
  r.weight_decay = get<double>(c, "teachers", "weight_decay");
  r.target_accuracy = get<double>(c, "teachers", "target_accuracy");
  r.seed = get<std::uint64_t>(c, "teachers", "seed");
  if (r.batch_size < 2) throw ConfigError("teachers.batch_size must be >= 2");
  return r;
}

distill::SynthesisRecipe synthesis_recipe(const json& c) {
  distill::SynthesisRecipe r;
  r.iterations = get<std::size_t>(c, "distill", "iterations");
  r.lr = get<double>(c, "distill", "lr");
  r.beta1 = get<double>(c, "distill", "beta1");
  r.beta2 = get<double>(c, "distill", "beta2");
  r.eps = get<double>(c, "distill", "eps");
  return r;
}

distill::DistillParams distill_params(const json& c) {
  distill::DistillParams p;
  p.ipc = get<std::size_t>(c, "distill", "ipc");
  p.alpha = get<double>(c, "distill", "alpha");
  p.recipe = synthesis_recipe(c);
  p.seed = get<std::uint64_t>(c, "distill", "seed");
  p.threads = thread_count(c);
  p.config_hash = section_hash(c, "distill");
  if (p.ipc == 0) throw ConfigError("distill.ipc must be >= 1");
  return p;
}

baselines::ClassSpecificParams class_specific_params(const json& c) {
  baselines::ClassSpecificParams p;
  p.ipc = get<std::size_t>(c, "baseline", "ipc");
  p.alpha = get<double>(c, "distill", "alpha");
  p.recipe = synthesis_recipe(c);
  p.seed = get<std::uint64_t>(c, "baseline", "seed");
  p.init = baselines::parse_init_mode(get<std::string>(c, "baseline", "init"));
  p.batch = baselines::parse_bn_batch(get<std::string>(c, "baseline", "bn_batch"));
  p.threads = thread_count(c);
  return p;
}

student::StudentRecipe student_recipe(const json& c) {
  student::StudentRecipe r;
  r.epochs = get<std::size_t>(c, "student", "epochs");
  r.batch_size = get<std::size_t>(c, "student", "batch_size");
  r.lr = get<double>(c, "student", "lr");
  r.weight_decay = get<double>(c, "student", "weight_decay");
  r.mixup_beta = get<double>(c, "student", "mixup_beta");
  r.use_mixup = get<bool>(c, "student", "use_mixup");
  r.seed = get<std::uint64_t>(c, "student", "seed");
  if (r.batch_size < 2) throw ConfigError("student.batch_size must be >= 2");
  if (!(r.mixup_beta > 0.0)) throw ConfigError("student.mixup_beta must be > 0");
  return r;
}

nn::ModelSpec student_spec(const json& c) {
  const auto d = dataset_params(c);
  return {nn::parse_architecture(get<std::string>(c, "student", "architecture")), d.dim, d.classes};
}

student::LabelMode label_mode(const json& c) {
  const auto m = get<std::string>(c, "student", "mode");
  if (m == "static") return student::LabelMode::Static;
  if (m == "dynamic") return student::LabelMode::Dynamic;
  throw ConfigError("student.mode must be static or dynamic, got '" + m + "'");
}

unsigned thread_count(const json& c) {
  try {
    const auto t = c.at("threads").get<unsigned>();
    return t == 0 ? 1u : t;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config threads: ") + e.what());
  }
}

}  // namespace ufc::cli
