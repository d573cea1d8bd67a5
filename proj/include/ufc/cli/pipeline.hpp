// SPDX-License-Identifier: Apache-2.0
//
// The end-to-end comparison: INFER (static and dynamic labels), a random
// coreset and the class-specific baseline, each baseline sized to the largest
// ipc whose storage does not exceed INFER's static-label budget.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ufc/data/dataset.hpp"
#include "ufc/distill/distill.hpp"

namespace ufc::cli {

/// Largest ipc in [1, max_ipc] with cr_of(ipc) <= target; 0 when even ipc = 1 is over budget.
/// cr_of must be non-decreasing.
std::size_t equalized_ipc(double target, const std::function<double(std::size_t)>& cr_of, std::size_t max_ipc);

struct MethodResult {
  std::string method;
  std::vector<std::size_t> ipc;  // per seed
  std::vector<double> cr;        // per seed, stored bytes / original bytes
  std::vector<double> top1;      // per seed
  double cr_dynamic = 0.0;       // INFER-dyn only: labels counted once per training epoch
  double mean() const;
  double stddev() const;         // sample standard deviation
};

struct CompareResult {
  std::vector<MethodResult> rows;
  nlohmann::json to_json() const;
  std::string table() const;
  const MethodResult& row(const std::string& method) const;
};

using Progress = std::function<void(const std::string&)>;

CompareResult run_compare(const nlohmann::json& config, const data::LabeledDataset& train,
                          const data::LabeledDataset& test, const distill::Ensemble& ensemble,
                          const Progress& progress = {});

}  // namespace ufc::cli
