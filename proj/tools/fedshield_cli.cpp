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

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fedshield/errors.hpp"
#include "fedshield/experiment/runner.hpp"

namespace {

namespace ex = fedshield::experiment;

constexpr int kExitConfig = 2;
constexpr int kExitFailure = 1;

struct CommonFlags {
  std::string config;
  std::optional<std::string> profile;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> threads;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config, "JSON experiment config")->check(CLI::ExistingFile);
  cmd->add_option("--profile", flags.profile, "desk or paper")
      ->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_option("--seed", flags.seed, "master seed");
  cmd->add_option("--out", flags.out, "output directory");
  cmd->add_option("--threads", flags.threads, "worker threads (1 is strictly deterministic)")
      ->check(CLI::PositiveNumber);
}

nlohmann::json resolve(const CommonFlags& flags) {
  const nlohmann::json user =
      flags.config.empty() ? nlohmann::json::object() : ex::load_config_file(flags.config);
  ex::Overrides overrides;
  if (flags.profile) overrides.profile = ex::parse_profile(*flags.profile);
  overrides.seed = flags.seed;
  overrides.output_dir = flags.out;
  overrides.threads = flags.threads;
  return ex::resolve_config(user, overrides);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated learning harness for latent-noise defenses and gradient inversion"};
  app.require_subcommand(1);

  CommonFlags pretrain_flags, run_flags, sweep_flags;
  auto* pretrain = app.add_subcommand("pretrain", "learn per-client noise parameters");
  add_common(pretrain, pretrain_flags);
  auto* run = app.add_subcommand("run", "federate, attack and evaluate one configuration");
  add_common(run, run_flags);
  auto* sweep = app.add_subcommand("sweep", "one run per value of sweep.parameter");
  add_common(sweep, sweep_flags);

  std::vector<std::string> plot_inputs;
  std::string plot_out = "plot.svg";
  auto* plot = app.add_subcommand("plot", "MSE versus client accuracy scatter");
  plot->add_option("csv", plot_inputs, "metrics or sweep CSV files")->required();
  plot->add_option("--out", plot_out, "output SVG path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*pretrain) {
      for (const auto& f : ex::cmd_pretrain(resolve(pretrain_flags))) {
        std::cout << f.string() << "\n";
      }
    } else if (*run) {
      const auto s = ex::cmd_run(resolve(run_flags));
      std::cout << s.dir.string() << "\n";
      for (std::size_t i = 0; i < s.row.size(); ++i) {
        std::cout << "  " << ex::metrics_columns()[i] << " = " << s.row[i] << "\n";
      }
    } else if (*sweep) {
      const auto s = ex::cmd_sweep(resolve(sweep_flags));
      std::cout << s.csv.string() << " (" << s.table.rows.size() << " rows)\n";
      for (const auto& [value, error] : s.failures) {
        std::cerr << "value " << value << " failed: " << error << "\n";
      }
      if (!s.failures.empty()) return kExitFailure;
    } else if (*plot) {
      std::vector<std::filesystem::path> paths(plot_inputs.begin(), plot_inputs.end());
      ex::cmd_plot(paths, plot_out);
      std::cout << plot_out << "\n";
    }
  } catch (const fedshield::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return 0;
}
