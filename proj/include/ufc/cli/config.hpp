// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: one JSON document with a fixed set of sections. Every key
// has a default; unknown keys are rejected. Each section is hashed separately
// so an artifact can record exactly the settings it depends on.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "ufc/baselines/baselines.hpp"
#include "ufc/data/dataset.hpp"
#include "ufc/distill/distill.hpp"
#include "ufc/nn/train.hpp"
#include "ufc/student/student.hpp"

namespace ufc::cli {

using nlohmann::json;

/// The complete default configuration.
json default_config();

/// Merges `overrides` into the defaults; ConfigError on unknown keys or type mismatches.
json merge_config(const json& overrides);

/// Applies "section.key=value" (value parsed as JSON, falling back to a string).
void apply_override(json& config, const std::string& assignment);

/// Reads `path` (if non-empty), merges it with the defaults and applies overrides.
json load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides);

/// FNV-1a of the canonical dump of one section.
std::string section_hash(const json& config, const std::string& section);

/// Hashes of every section an artifact of `stage` depends on.
json stage_hashes(const json& config, const std::string& stage);

data::ToyParams dataset_params(const json& config);
std::vector<nn::ArchitectureId> teacher_architectures(const json& config);
nn::TeacherRecipe teacher_recipe(const json& config);
distill::SynthesisRecipe synthesis_recipe(const json& config);
distill::DistillParams distill_params(const json& config);
baselines::ClassSpecificParams class_specific_params(const json& config);
student::StudentRecipe student_recipe(const json& config);
nn::ModelSpec student_spec(const json& config);
student::LabelMode label_mode(const json& config);
unsigned thread_count(const json& config);

}  // namespace ufc::cli
