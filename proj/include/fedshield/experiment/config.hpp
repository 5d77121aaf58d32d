// Copyright 2026 The fedshield Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fedshield/attack/inversion.hpp"
#include "fedshield/defense/defense.hpp"
#include "fedshield/fl/federation.hpp"
#include "fedshield/model/defender.hpp"
#include "json.hpp"

namespace fedshield::experiment {

enum class Profile { kDesk, kPaper };

const char* profile_name(Profile profile);
Profile parse_profile(const std::string& name);

// Command-line values that take precedence over the config file.
struct Overrides {
  std::optional<Profile> profile;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;
  std::optional<int> threads;
};

// Complete default document for one (profile, dataset, defense kind).
nlohmann::json default_config(Profile profile, const std::string& dataset,
                              const std::string& defense);

// Reads a JSON config; syntax errors raise ConfigError naming the file.
nlohmann::json load_config_file(const std::filesystem::path& path);

// Merges `user` over the matching defaults, applies `overrides` and checks
// every field against the schema. Unknown keys and wrong types raise
// ConfigError with the dotted field path.
nlohmann::json resolve_config(const nlohmann::json& user, const Overrides& overrides = {});

// Replaces the value at a dotted path; objects are merged key by key.
void set_path(nlohmann::json& doc, const std::string& path, const nlohmann::json& value);
const nlohmann::json& get_path(const nlohmann::json& doc, const std::string& path);

struct DatasetConfig {
  std::string name = "synthetic";  // synthetic | cifar10 | bloodmnist
  std::string root;
  std::int64_t max_train = 0;
  std::int64_t max_test = 0;
  std::int64_t channels = 3;  // synthetic only
  std::int64_t height = 16;
  std::int64_t width = 16;
  int num_classes = 8;
};

struct AttackSection {
  bool enabled = true;
  int round = 0;
  attack::AttackConfig config;
};

struct EvalConfig {
  bool with_noise = true;
  bool probe = true;
  std::string clean_checkpoint;  // reuse a trained defense=none model for the probe
};

struct SweepSpec {
  std::string parameter;
  std::vector<nlohmann::json> values;
};

struct ExperimentConfig {
  Profile profile = Profile::kDesk;
  std::uint64_t seed = 0;
  int threads = 1;
  std::string output_dir;
  DatasetConfig dataset;
  int width_divisor = 1;
  int final_deconv_kernel = 0;
  fl::FederationConfig federation;
  defense::DefenseConfig defense;
  std::string noise_file;
  AttackSection attack;
  EvalConfig eval;
  SweepSpec sweep;
};

// Typed view of a resolved document; range checks raise ConfigError.
ExperimentConfig parse_config(const nlohmann::json& resolved);

// Value of the swept hyperparameter as written to the metrics CSV.
std::string hyperparameter_label(const defense::DefenseConfig& config);

}  // namespace fedshield::experiment
