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

#include <filesystem>
#include <string>
#include <vector>

#include "fedshield/experiment/config.hpp"
#include "fedshield/io/csv.hpp"
#include "fedshield/metrics/metrics.hpp"

namespace fedshield::experiment {

// Header of every metrics CSV, in column order.
const std::vector<std::string>& metrics_columns();

struct Datasets {
  data::DatasetSplit train;
  data::DatasetSplit test;
};

Datasets load_datasets(const ExperimentConfig& config);
model::ArchitectureConfig architecture(const ExperimentConfig& config,
                                       const data::DatasetSplit& train);

struct PretrainOutput {
  std::vector<model::NoiseSpec> noise;  // one per client
  std::vector<std::filesystem::path> files;
};

// Learns one noise spec per client on its own shard. Writes
// noise_client<k>.fsh and pretrain_log_client<k>.csv under `dir`.
PretrainOutput pretrain_clients(const ExperimentConfig& config, const Datasets& data,
                                const std::filesystem::path& dir);

struct RunSummary {
  std::filesystem::path dir;
  std::vector<std::string> row;  // metrics CSV row
  double client_accuracy = 0.0;
  double f1 = 0.0;
  double recon_psnr_db = 0.0;
  double recon_mse_norm = 0.0;
  double recon_mse_px = 0.0;
  double probe_accuracy = 0.0;
  bool attacked = false;
};

struct SweepSummary {
  std::filesystem::path csv;
  io::CsvTable table;
  std::vector<std::pair<std::string, std::string>> failures;  // (value, error)
};

// Each command writes the resolved config to its output directory first.
std::vector<std::filesystem::path> cmd_pretrain(const nlohmann::json& resolved);
RunSummary cmd_run(const nlohmann::json& resolved);
SweepSummary cmd_sweep(const nlohmann::json& resolved);
// Scatter of recon_mse_norm against client_acc with one series per defense.
void cmd_plot(const std::vector<std::filesystem::path>& csvs, const std::filesystem::path& out);

}  // namespace fedshield::experiment
