// SPDX-License-Identifier: Apache-2.0
#include "ufc/cli/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>

#include "CLI11.hpp"
#include "ufc/baselines/baselines.hpp"
#include "ufc/cli/config.hpp"
#include "ufc/cli/pipeline.hpp"
#include "ufc/distill/bundle_io.hpp"
#include "ufc/metrics/analysis.hpp"
#include "ufc/metrics/budget.hpp"
#include "ufc/nn/model_io.hpp"
#include "ufc/util/binary_io.hpp"
#include "ufc/util/hash.hpp"

namespace ufc::cli {
namespace fs = std::filesystem;
using diffcore::Tensor;

namespace {

struct Context {
  json config;
  fs::path root;
  bool force = false;
  std::ostream* out = nullptr;
};

std::string stage_hash(const json& config, const std::string& stage) { return hash_hex(stage_hashes(config, stage).dump()); }

json provenance(const Context& ctx, const std::string& stage) {
  return {{"stage", stage}, {"config_hash", stage_hash(ctx.config, stage)}, {"section_hashes", stage_hashes(ctx.config, stage)}};
}

/// ArtifactError unless `meta` was produced under the current settings of `stage`.
void require_compatible(const json& meta, const Context& ctx, const std::string& stage, const fs::path& where) {
  const std::string want = stage_hash(ctx.config, stage);
  const std::string have = meta.contains("config_hash") ? meta["config_hash"].get<std::string>() : "";
  if (have != want) {
    throw ArtifactError(where.string(), "produced with a different " + stage + " configuration (hash " +
                                            (have.empty() ? "missing" : have) + ", current " + want + ")");
  }
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void write_json(const fs::path& path, const json& j) { io::write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  try {
    return json::parse(io::read_text(path));
  } catch (const json::exception& e) {
    throw ArtifactError(path.string(), e.what());
  }
}

std::string trace_csv(const std::vector<nn::EpochRecord>& trace) {
  std::string s = "epoch,train_loss,test_top1\n";
  char buf[96];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.6f\n", r.epoch, r.train_loss, r.test_top1);
    s += buf;
  }
  return s;
}

fs::path data_dir(const Context& c, const char* split) { return c.root / "data" / split; }
fs::path teacher_dir(const Context& c, nn::ArchitectureId a) { return c.root / "teachers" / nn::to_string(a); }
fs::path bundle_dir(const Context& c) { return c.root / "distill" / "bundle"; }
fs::path baseline_dir(const Context& c, const std::string& kind) { return c.root / "baseline" / kind / "bundle"; }

data::LabeledDataset load_split(const Context& ctx, const char* split) {
  const fs::path dir = data_dir(ctx, split);
  const auto ds = data::load_dataset(dir);
  const json m = read_json(dir / "manifest.json");
  require_compatible(m.value("meta", json::object()), ctx, "dataset", dir / "manifest.json");
  return ds;
}

distill::Ensemble load_ensemble(const Context& ctx) {
  std::vector<nn::Model> members;
  for (auto a : teacher_architectures(ctx.config)) {
    const fs::path dir = teacher_dir(ctx, a);
    members.push_back(nn::load_model(dir));
    const json m = read_json(dir / "manifest.json");
    require_compatible(m.value("meta", json::object()), ctx, "teachers", dir / "manifest.json");
  }
  return distill::Ensemble(std::move(members));
}

const nn::Model& member(const distill::Ensemble& ens, const std::string& name, const char* key) {
  const auto a = nn::parse_architecture(name);
  for (const auto& m : ens.members())
    if (m.spec().architecture == a) return m;
  throw ConfigError(std::string(key) + " " + name + " is not one of teachers.architectures");
}

fs::path prepare(const Context& ctx, const fs::path& dir) {
  io::prepare_output_dir(dir, ctx.force);
  return dir;
}

// ---------------------------------------------------------------------------

void cmd_gen_data(Context& ctx) {
  const auto params = dataset_params(ctx.config);
  const auto toy = data::generate_toy_dataset(params);
  const fs::path dir = prepare(ctx, ctx.root / "data");
  json meta = provenance(ctx, "dataset");
  meta["split"] = "train";
  data::save_dataset(dir / "train", toy.train, meta);
  meta["split"] = "test";
  data::save_dataset(dir / "test", toy.test, meta);
  write_json(dir / "summary.json", {{"train_size", toy.train.size()}, {"test_size", toy.test.size()},
                                    {"classes", params.classes}, {"dim", params.dim}, {"spread", params.spread},
                                    {"provenance", provenance(ctx, "dataset")}});
  *ctx.out << "gen-data: " << toy.train.size() << " train / " << toy.test.size() << " test instances -> " << dir.string() << "\n";
}

void cmd_train_teachers(Context& ctx) {
  const auto train = load_split(ctx, "train");
  const auto test = load_split(ctx, "test");
  const auto recipe = teacher_recipe(ctx.config);
  const fs::path dir = prepare(ctx, ctx.root / "teachers");
  json summary = {{"provenance", provenance(ctx, "teachers")}, {"teachers", json::array()}};
  for (auto a : teacher_architectures(ctx.config)) {
    const auto t = nn::train_teacher(train, {a, train.dim(), train.class_count}, recipe, &test);
    json meta = provenance(ctx, "teachers");
    meta["train_top1"] = t.train_top1;
    meta["test_top1"] = t.trace.empty() ? 0.0 : t.trace.back().test_top1;
    nn::save_model(teacher_dir(ctx, a), t.model, meta);
    io::write_text(teacher_dir(ctx, a) / "trace.csv", trace_csv(t.trace));
    summary["teachers"].push_back({{"architecture", nn::to_string(a)}, {"train_top1", t.train_top1}, {"test_top1", meta["test_top1"]}});
    *ctx.out << "teacher " << nn::to_string(a) << ": train top1 " << fmt(t.train_top1) << ", test top1 "
             << fmt(meta["test_top1"].get<double>()) << "\n";
  }
  write_json(dir / "summary.json", summary);
}

void cmd_distill(Context& ctx) {
  const auto train = load_split(ctx, "train");
  const auto ensemble = load_ensemble(ctx);
  auto params = distill_params(ctx.config);
  params.config_hash = stage_hash(ctx.config, "distill");
  const auto bundle = distill::distill(train, ensemble, params);
  const fs::path dir = prepare(ctx, ctx.root / "distill");
  distill::save_bundle(dir / "bundle", bundle);
  const auto report = metrics::budget_from_directory(dir / "bundle", train);
  write_json(dir / "summary.json", {{"K", bundle.K()}, {"M", bundle.M}, {"C", bundle.C}, {"ipc", bundle.ipc},
                                    {"integrated_size", bundle.integrated_size()}, {"budget", report.to_json()},
                                    {"provenance", provenance(ctx, "distill")}});
  *ctx.out << "distill: K=" << bundle.K() << " M=" << bundle.M << " integrated " << bundle.integrated_size()
           << " instances, CR " << fmt(report.cr) << "\n";
}

void cmd_baseline(Context& ctx) {
  const auto train = load_split(ctx, "train");
  const std::string kind = ctx.config.at("baseline").at("kind").get<std::string>();
  const auto ipc = ctx.config.at("baseline").at("ipc").get<std::size_t>();
  const auto seed = ctx.config.at("baseline").at("seed").get<std::uint64_t>();
  const std::string labels = ctx.config.at("baseline").at("coreset_labels").get<std::string>();
  baselines::BaselineSet set;
  if (kind == "coreset") {
    if (labels != "onehot" && labels != "ensemble") throw ConfigError("baseline.coreset_labels must be onehot or ensemble");
    set = baselines::random_coreset(train, ipc, seed);
    if (labels == "ensemble") baselines::relabel_with(set, load_ensemble(ctx));
  } else if (kind == "class_specific") {
    const auto ensemble = load_ensemble(ctx);
    const auto& teacher = member(ensemble, ctx.config.at("baseline").at("teacher").get<std::string>(), "baseline.teacher");
    set = baselines::class_specific_synthesis(train, teacher, ensemble, class_specific_params(ctx.config));
  } else {
    throw ConfigError("baseline.kind must be coreset or class_specific, got '" + kind + "'");
  }
  set.provenance["config_hash"] = stage_hash(ctx.config, "baseline");
  const fs::path dir = prepare(ctx, ctx.root / "baseline" / kind);
  baselines::save_baseline(dir / "bundle", set);
  const auto report = metrics::budget_from_directory(dir / "bundle", train);
  write_json(dir / "summary.json", {{"kind", kind}, {"ipc", ipc}, {"size", set.size()}, {"budget", report.to_json()},
                                    {"provenance", provenance(ctx, "baseline")}});
  *ctx.out << "baseline " << kind << ": " << set.size() << " instances, CR " << fmt(report.cr) << "\n";
}

student::TrainingSet load_training_set(const Context& ctx, const std::string& source, fs::path& from) {
  if (source == "infer") {
    from = bundle_dir(ctx);
    const auto bundle = distill::load_bundle(from);
    if (bundle.provenance.config_hash != stage_hash(ctx.config, "distill")) {
      throw ArtifactError((from / distill::kManifestFile).string(), "bundle was produced with a different configuration");
    }
    return student::integrate(bundle);
  }
  if (source == "coreset" || source == "class_specific") {
    from = baseline_dir(ctx, source);
    const auto set = baselines::load_baseline(from);
    require_compatible(set.provenance, ctx, "baseline", from / distill::kManifestFile);
    return baselines::to_training_set(set);
  }
  throw ConfigError("student.source must be infer, coreset or class_specific, got '" + source + "'");
}

void cmd_train_student(Context& ctx) {
  const auto test = load_split(ctx, "test");
  const std::string source = ctx.config.at("student").at("source").get<std::string>();
  const auto mode = label_mode(ctx.config);
  fs::path from;
  const auto set = load_training_set(ctx, source, from);
  const std::size_t loads_before = nn::model_load_count();
  distill::Ensemble ensemble;
  if (mode == student::LabelMode::Dynamic) ensemble = load_ensemble(ctx);
  const auto recipe = student_recipe(ctx.config);
  const auto result = student::train_student(set, student_spec(ctx.config), recipe, mode,
                                             mode == student::LabelMode::Dynamic ? &ensemble : nullptr, &test);
  const std::size_t teacher_loads = nn::model_load_count() - loads_before;
  const std::string name = source + "-" + (mode == student::LabelMode::Static ? "static" : "dynamic");
  const fs::path dir = prepare(ctx, ctx.root / "student" / name);
  const double top1 = student::evaluate(result.model, test);
  nn::save_model(dir / "model", result.model, provenance(ctx, "student"));
  io::write_text(dir / "trace.csv", trace_csv(result.trace));
  write_json(dir / "summary.json",
             {{"source", source}, {"training_set", from.string()}, {"mode", mode == student::LabelMode::Static ? "static" : "dynamic"},
              {"epochs_run", result.epochs_run}, {"training_size", set.size()}, {"test_top1", top1},
              {"teacher_loads", teacher_loads}, {"label_queries", ensemble.query_count()},
              {"student", ctx.config.at("student")}, {"provenance", provenance(ctx, "student")}});
  *ctx.out << "student " << name << ": " << result.epochs_run << " epochs, test top1 " << fmt(top1) << "\n";
}

void cmd_evaluate(Context& ctx, const fs::path& model_dir, const std::string& split) {
  if (model_dir.empty()) throw ConfigError("evaluate needs --model DIR");
  if (split != "test" && split != "train") throw ConfigError("evaluate --split must be train or test");
  const auto ds = load_split(ctx, split.c_str());
  const auto model = nn::load_model(model_dir);
  const double top1 = student::evaluate(model, ds);
  *ctx.out << "top1 " << fmt(top1) << "\n";
}

struct MetricFlags {
  bool cr = false, duplication = false, landscape = false, linearity = false, features = false;
  fs::path bundle;
  std::size_t dynamic_epochs = 0;
  fs::path baseline;
};

void cmd_metrics(Context& ctx, MetricFlags f) {
  if (!(f.cr || f.duplication || f.landscape || f.linearity || f.features)) f.cr = true;
  const auto train = load_split(ctx, "train");
  if (f.bundle.empty()) f.bundle = bundle_dir(ctx);
  const auto& mc = ctx.config.at("metrics");
  const fs::path dir = prepare(ctx, ctx.root / "metrics");
  json summary = {{"provenance", provenance(ctx, "metrics")}};

  if (f.cr) {
    const auto labels = f.dynamic_epochs ? metrics::LabelBudget::dynamic_labels(f.dynamic_epochs) : metrics::LabelBudget{};
    const auto report = metrics::budget_from_directory(f.bundle, train, labels);
    json j = report.to_json();
    j["bundle"] = f.bundle.string();
    j["kind"] = distill::bundle_kind(f.bundle);
    write_json(dir / "budget.json", j);
    summary["budget"] = j;
    *ctx.out << "cr " << fmt(report.cr) << " (" << report.total_bytes() << " / " << report.original_bytes << " bytes)\n";
  }
  const bool need_teachers = f.duplication || f.landscape || f.linearity || f.features;
  if (!need_teachers) {
    write_json(dir / "summary.json", summary);
    return;
  }
  const auto ensemble = load_ensemble(ctx);
  const auto& probe = member(ensemble, mc.at("probe").get<std::string>(), "metrics.probe");
  std::optional<student::TrainingSet> integrated;
  std::vector<std::int32_t> integrated_classes;
  auto need_integrated = [&]() -> const student::TrainingSet& {
    if (!integrated) {
      integrated = student::integrate(distill::load_bundle(f.bundle));
      for (const auto& o : integrated->origins) integrated_classes.push_back(static_cast<std::int32_t>(o.i));
    }
    return *integrated;
  };

  if (f.duplication) {
    const auto& set = need_integrated();
    const auto infer = metrics::feature_duplication(probe, set.instances, integrated_classes, train.class_count);
    json j = {{"probe", nn::to_string(probe.spec().architecture)},
              {"infer", {{"mean", infer.mean}, {"per_class", infer.per_class}, {"excluded", infer.excluded}}}};
    if (f.baseline.empty() && fs::exists(baseline_dir(ctx, "class_specific"))) f.baseline = baseline_dir(ctx, "class_specific");
    if (!f.baseline.empty()) {
      const auto base = baselines::load_baseline(f.baseline);
      const auto b = metrics::feature_duplication(probe, base.instances, base.classes, train.class_count);
      j["baseline"] = {{"kind", baselines::to_string(base.kind)}, {"bundle", f.baseline.string()}, {"mean", b.mean},
                       {"per_class", b.per_class}, {"excluded", b.excluded}};
      *ctx.out << "duplication " << baselines::to_string(base.kind) << " " << fmt(b.mean) << "\n";
    }
    write_json(dir / "duplication.json", j);
    summary["duplication"] = j;
    *ctx.out << "duplication infer " << fmt(infer.mean) << "\n";
  }
  if (f.landscape) {
    const auto& set = need_integrated();
    Rng rng = make_rng(mc.at("seed").get<std::uint64_t>(), 0x1a4d);
    Tensor du = Tensor::zeros({train.dim()}), dv = Tensor::zeros({train.dim()});
    for (float& x : du.vec()) x = static_cast<float>(normal01(rng));
    for (float& x : dv.vec()) x = static_cast<float>(normal01(rng));
    Tensor anchor({train.dim()}, std::vector<float>(set.instances.row(0).begin(), set.instances.row(0).end()));
    const auto grid = metrics::loss_landscape_grid(probe, anchor, integrated_classes.at(0), du, dv,
                                                   mc.at("landscape_extent").get<double>(),
                                                   mc.at("landscape_resolution").get<std::size_t>());
    metrics::write_grid_csv(dir / "landscape.csv", grid);
    summary["landscape"] = {{"file", "landscape.csv"}, {"resolution", grid.dim(0)}};
    *ctx.out << "landscape " << grid.dim(0) << "x" << grid.dim(1) << " -> " << (dir / "landscape.csv").string() << "\n";
  }
  if (f.linearity) {
    const auto& set = need_integrated();
    Rng rng = make_rng(mc.at("seed").get<std::uint64_t>(), 0x11ea);
    const auto pairs = metrics::sample_pairs(set.size(), mc.at("linearity_pairs").get<std::size_t>(), rng);
    const auto lambdas = mc.at("linearity_lambdas").get<std::vector<double>>();
    json rows = json::array();
    for (const auto& g : metrics::label_linearity_gap(ensemble, set.instances, pairs, lambdas)) {
      rows.push_back({{"lambda", g.lambda}, {"mean_gap", g.mean_gap}, {"max_gap", g.max_gap}});
      *ctx.out << "linearity lambda " << g.lambda << ": mean " << fmt(g.mean_gap) << ", max " << fmt(g.max_gap) << "\n";
    }
    write_json(dir / "linearity.json", rows);
    summary["linearity"] = rows;
  }
  if (f.features) {
    metrics::export_penultimate_features(probe, train, dir / "features.csv");
    summary["features"] = {{"file", "features.csv"}, {"rows", train.size()}, {"dim", probe.feature_dim()}};
    *ctx.out << "features " << train.size() << "x" << probe.feature_dim() << " -> " << (dir / "features.csv").string() << "\n";
  }
  write_json(dir / "summary.json", summary);
}

void cmd_compare(Context& ctx) {
  const auto train = load_split(ctx, "train");
  const auto test = load_split(ctx, "test");
  const auto ensemble = load_ensemble(ctx);
  const fs::path dir = prepare(ctx, ctx.root / "compare");
  const auto result = run_compare(ctx.config, train, test, ensemble, [&](const std::string& s) { *ctx.out << s << "\n"; });
  io::write_text(dir / "table.txt", result.table());
  write_json(dir / "summary.json", {{"methods", result.to_json()}, {"provenance", provenance(ctx, "compare")}});
  *ctx.out << result.table();
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"ufc: dataset distillation with universal feature compensators"};
  app.require_subcommand(1);
  std::string config_path, run_dir;
  std::vector<std::string> overrides;
  bool force = false;
  int threads = -1;
  auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "JSON config file");
    sub->add_option("--set", overrides, "override a config value, e.g. --set distill.ipc=20")->take_all();
    sub->add_option("--run", run_dir, "run directory (overrides output.dir)");
    sub->add_option("--threads", threads, "worker cap");
    sub->add_flag("--force", force, "replace existing outputs");
  };
  std::map<std::string, CLI::App*> subs;
  for (const char* name : {"gen-data", "train-teachers", "distill", "baseline", "train-student", "evaluate", "metrics", "compare"}) {
    subs[name] = app.add_subcommand(name);
    common(subs[name]);
  }
  std::string model_dir, split = "test";
  subs["evaluate"]->add_option("--model", model_dir, "model directory")->required();
  subs["evaluate"]->add_option("--split", split, "train or test");
  MetricFlags mf;
  std::string bundle, baseline;
  auto* m = subs["metrics"];
  m->add_flag("--cr", mf.cr, "budget report of a bundle directory");
  m->add_flag("--duplication", mf.duplication, "within-class feature cosine similarity");
  m->add_flag("--landscape", mf.landscape, "CE grid around an integrated instance");
  m->add_flag("--linearity", mf.linearity, "label linearity gap under mixing");
  m->add_flag("--features", mf.features, "export penultimate features of the training set");
  m->add_option("--bundle", bundle, "bundle directory (default: the run's distilled bundle)");
  m->add_option("--baseline", baseline, "baseline bundle for --duplication");
  m->add_option("--dynamic-epochs", mf.dynamic_epochs, "count labels for E epochs of dynamic relabeling");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  }

  try {
    Context ctx;
    ctx.config = load_config(config_path, overrides);
    if (threads >= 0) ctx.config["threads"] = threads;
    if (!run_dir.empty()) ctx.config["output"]["dir"] = run_dir;
    ctx.root = ctx.config.at("output").at("dir").get<std::string>();
    ctx.force = force;
    ctx.out = &out;
    mf.bundle = bundle;
    mf.baseline = baseline;
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "gen-data") cmd_gen_data(ctx);
    else if (cmd == "train-teachers") cmd_train_teachers(ctx);
    else if (cmd == "distill") cmd_distill(ctx);
    else if (cmd == "baseline") cmd_baseline(ctx);
    else if (cmd == "train-student") cmd_train_student(ctx);
    else if (cmd == "evaluate") cmd_evaluate(ctx, model_dir, split);
    else if (cmd == "metrics") cmd_metrics(ctx, mf);
    else if (cmd == "compare") cmd_compare(ctx);
    return kOk;
  } catch (const ArtifactError& e) {
    err << "error: " << e.what() << "\n";
    return kArtifactError;
  } catch (const ConvergenceError& e) {
    err << "error: " << e.what() << "\n";
    return kConvergenceError;
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << "\n";
    return kConvergenceError;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const BudgetError& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
}

}  // namespace ufc::cli
