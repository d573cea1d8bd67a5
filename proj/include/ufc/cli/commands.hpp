// SPDX-License-Identifier: Apache-2.0
//
// Subcommands. A run directory (output.dir) collects every artifact:
//
//   data/{train,test}/             datasets
//   teachers/<arch>/               teacher models with trace.csv
//   distill/bundle/                distilled bundle (only the four bundle files)
//   baseline/<kind>/bundle/        baseline sets in the same format
//   student/<source>-<mode>/       student model, trace.csv, summary.json
//   metrics/                       budget, duplication, landscape, linearity, features
//   compare/                       table.txt, summary.json
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ufc::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfigError = 2, kArtifactError = 3, kConvergenceError = 4 };

/// Parses `args` (without the program name), runs the subcommand and maps
/// errors to exit codes. Progress goes to `out`, errors to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ufc::cli
