// SPDX-License-Identifier: Apache-2.0
#include "ufc/cli/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "ufc/baselines/baselines.hpp"
#include "ufc/cli/config.hpp"
#include "ufc/metrics/budget.hpp"
#include "ufc/student/student.hpp"

namespace ufc::cli {
using nlohmann::json;

std::size_t equalized_ipc(double target, const std::function<double(std::size_t)>& cr_of, std::size_t max_ipc) {
  std::size_t best = 0;
  for (std::size_t q = 1; q <= max_ipc; ++q) {
    if (cr_of(q) > target) break;
    best = q;
  }
  return best;
}

double MethodResult::mean() const {
  double s = 0.0;
  for (double v : top1) s += v;
  return top1.empty() ? 0.0 : s / static_cast<double>(top1.size());
}

double MethodResult::stddev() const {
  if (top1.size() < 2) return 0.0;
  const double m = mean();
  double s = 0.0;
  for (double v : top1) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(top1.size() - 1));
}

const MethodResult& CompareResult::row(const std::string& method) const {
  for (const auto& r : rows)
    if (r.method == method) return r;
  throw ContractError("compare: no row for method '" + method + "'");
}

json CompareResult::to_json() const {
  json out = json::array();
  for (const auto& r : rows) {
    json j = {{"method", r.method}, {"ipc", r.ipc}, {"cr", r.cr}, {"top1", r.top1}, {"top1_mean", r.mean()},
              {"top1_std", r.stddev()}};
    if (r.method == "infer-dyn") j["cr_dynamic"] = r.cr_dynamic;
    out.push_back(j);
  }
  return out;
}

std::string CompareResult::table() const {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-16s %6s %9s %10s %9s  %s\n", "method", "ipc", "CR", "top1_mean", "top1_std", "per-seed top1");
  out += buf;
  for (const auto& r : rows) {
    std::string ipcs, seeds;
    for (std::size_t i = 0; i < r.top1.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%s%.4f", i ? " " : "", r.top1[i]);
      seeds += buf;
    }
    const bool same_ipc = std::all_of(r.ipc.begin(), r.ipc.end(), [&](std::size_t q) { return q == r.ipc.front(); });
    ipcs = r.ipc.empty() ? "-" : same_ipc ? std::to_string(r.ipc.front()) : "var";
    double cr = 0.0;
    for (double c : r.cr) cr += c;
    cr = r.cr.empty() ? 0.0 : cr / static_cast<double>(r.cr.size());
    std::snprintf(buf, sizeof buf, "%-16s %6s %9.5f %10.4f %9.4f  %s\n", r.method.c_str(), ipcs.c_str(), cr, r.mean(),
                  r.stddev(), seeds.c_str());
    out += buf;
  }
  for (const auto& r : rows) {
    if (r.method != "infer-dyn") continue;
    std::snprintf(buf, sizeof buf, "infer-dyn regenerates labels every epoch; counting them gives CR %.5f\n", r.cr_dynamic);
    out += buf;
  }
  return out;
}

CompareResult run_compare(const json& config, const data::LabeledDataset& train, const data::LabeledDataset& test,
                          const distill::Ensemble& ensemble, const Progress& progress) {
  auto say = [&](const std::string& s) {
    if (progress) progress(s);
  };
  const auto seeds = config.at("compare").at("seeds").get<std::size_t>();
  const auto max_ipc = config.at("compare").at("max_ipc").get<std::size_t>();
  if (seeds == 0) throw ConfigError("compare.seeds must be >= 1");
  const auto spec = student_spec(config);
  const bool coreset_soft = config.at("baseline").at("coreset_labels").get<std::string>() == "ensemble";
  if (!coreset_soft && config.at("baseline").at("coreset_labels") != "onehot") {
    throw ConfigError("baseline.coreset_labels must be onehot or ensemble");
  }
  const auto probe_arch = nn::parse_architecture(config.at("baseline").at("teacher").get<std::string>());
  const nn::Model* probe = nullptr;
  for (const auto& m : ensemble.members())
    if (m.spec().architecture == probe_arch) probe = &m;
  if (!probe) throw ConfigError("baseline.teacher " + nn::to_string(probe_arch) + " is not in the ensemble");

  CompareResult result;
  for (const char* name : {"random", "class-specific", "infer-static", "infer-dyn"}) {
    result.rows.emplace_back();
    result.rows.back().method = name;
  }
  auto& random = result.rows[0];
  auto& specific = result.rows[1];
  auto& infer_s = result.rows[2];
  auto& infer_d = result.rows[3];

  for (std::size_t s = 0; s < seeds; ++s) {
    auto dp = distill_params(config);
    dp.seed += s;
    auto sr = student_recipe(config);
    sr.seed += s;
    const std::uint64_t base_seed = config.at("baseline").at("seed").get<std::uint64_t>() + s;
    const std::string tag = "seed " + std::to_string(s) + ": ";

    say(tag + "distilling");
    const auto bundle = distill::distill(train, ensemble, dp);
    const auto set = student::integrate(bundle);
    const double target = metrics::compression_ratio(bundle, train).cr;

    say(tag + "INFER students");
    const auto st = student::train_student(set, spec, sr, student::LabelMode::Static, nullptr, &test);
    infer_s.ipc.push_back(dp.ipc);
    infer_s.cr.push_back(target);
    infer_s.top1.push_back(student::evaluate(st.model, test));
    const auto dy = student::train_student(set, spec, sr, student::LabelMode::Dynamic, &ensemble, &test);
    infer_d.ipc.push_back(dp.ipc);
    infer_d.cr.push_back(target);
    infer_d.top1.push_back(student::evaluate(dy.model, test));
    infer_d.cr_dynamic =
        metrics::compression_ratio(bundle, train, metrics::LabelBudget::dynamic_labels(dy.epochs_run)).cr;

    say(tag + "random coreset");
    const std::size_t q_rand = equalized_ipc(
        target, [&](std::size_t q) { return metrics::compression_ratio(baselines::random_coreset(train, q, base_seed), train).cr; },
        max_ipc);
    if (q_rand == 0) throw BudgetError("compare: a one-instance-per-class coreset already exceeds INFER's budget");
    auto core = baselines::random_coreset(train, q_rand, base_seed);
    if (coreset_soft) baselines::relabel_with(core, ensemble);
    const auto rs = student::train_student(baselines::to_training_set(core), spec, sr, student::LabelMode::Static, nullptr, &test);
    random.ipc.push_back(q_rand);
    random.cr.push_back(metrics::compression_ratio(core, train).cr);
    random.top1.push_back(student::evaluate(rs.model, test));

    say(tag + "class-specific baseline");
    auto cp = class_specific_params(config);
    cp.seed = base_seed;
    // The class-specific set always carries ensemble labels; size it with the
    // manifest it will actually have. A zero-iteration run has the same layout.
    auto probe_params = cp;
    probe_params.recipe.iterations = 0;
    const std::size_t q_cs = equalized_ipc(
        target,
        [&](std::size_t q) {
          if (q < 2) return 0.0;
          probe_params.ipc = q;
          return metrics::compression_ratio(baselines::class_specific_synthesis(train, *probe, ensemble, probe_params), train).cr;
        },
        max_ipc);
    if (q_cs < 2) throw BudgetError("compare: class-specific baseline needs ipc >= 2 within INFER's budget");
    cp.ipc = q_cs;
    auto cs = baselines::class_specific_synthesis(train, *probe, ensemble, cp);
    // Printed CE values can lengthen the manifest by a few bytes.
    while (metrics::compression_ratio(cs, train).cr > target && cp.ipc > 2) {
      --cp.ipc;
      cs = baselines::class_specific_synthesis(train, *probe, ensemble, cp);
    }
    const auto cst = student::train_student(baselines::to_training_set(cs), spec, sr, student::LabelMode::Static, nullptr, &test);
    specific.ipc.push_back(cp.ipc);
    specific.cr.push_back(metrics::compression_ratio(cs, train).cr);
    specific.top1.push_back(student::evaluate(cst.model, test));
  }
  return result;
}

}  // namespace ufc::cli
