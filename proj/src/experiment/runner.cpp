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

#include "fedshield/experiment/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

#include "fedshield/errors.hpp"
#include "fedshield/io/archive.hpp"
#include "fedshield/io/image.hpp"

namespace fedshield::experiment {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void write_json(const fs::path& path, const json& doc) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(path.string() + ": cannot write");
  out << doc.dump(2) << "\n";
}

fs::path prepare_dir(const json& resolved, const ExperimentConfig& config) {
  const fs::path dir = config.output_dir;
  fs::create_directories(dir);
  write_json(dir / "resolved_config.json", resolved);
  return dir;
}

std::string client_file(const char* stem, int client, const char* ext) {
  return std::string(stem) + "_client" + std::to_string(client) + ext;
}

// Same data and federation as `resolved`, trained without any defense and
// without an attack. DP-SGD runs swap in the undefended learning rate since
// their rate is tuned for plain SGD.
json clean_document(const json& resolved) {
  const auto config = parse_config(resolved);
  json doc = resolved;
  doc["defense"]["kind"] = "none";
  if (config.defense.kind == defense::DefenseKind::kDpSgd) {
    doc["federation"]["client_lr"] =
        default_config(config.profile, config.dataset.name, "none")["federation"]["client_lr"];
  }
  doc["attack"]["enabled"] = false;
  doc["eval"]["probe"] = false;
  doc["eval"]["clean_checkpoint"] = "";
  return doc;
}

ModelParameters train_clean(const json& resolved, const model::DefenderModel& model,
                            const Datasets& data) {
  const auto clean = parse_config(clean_document(resolved));
  return fl::run_federation(clean.federation, clean.defense, model, data.train, data.test).global;
}

std::vector<model::NoiseSpec> load_client_noise(const fs::path& path, int clients) {
  std::vector<model::NoiseSpec> out;
  for (int c = 0; c < clients; ++c) {
    out.push_back(defense::load_noise(fs::is_directory(path)
                                          ? path / client_file("noise", c, ".fsh")
                                          : path));
  }
  return out;
}

std::string number_or_nan(double v, bool valid) {
  return valid ? io::format_number(v) : "nan";
}

}  // namespace

const std::vector<std::string>& metrics_columns() {
  static const std::vector<std::string> columns = {
      "dataset",        "defense",      "hyperparameter", "seed",          "client_acc",
      "f1",             "recon_mse_norm", "recon_mse_px", "recon_psnr_db", "probe_acc"};
  return columns;
}

Datasets load_datasets(const ExperimentConfig& config) {
  const auto& d = config.dataset;
  data::LoadOptions options{static_cast<std::size_t>(d.max_train),
                            static_cast<std::size_t>(d.max_test), config.seed};
  if (d.name == "synthetic") {
    auto pair = data::make_synthetic_pair(
        {d.max_train, d.channels, d.height, d.width, d.num_classes, config.seed}, d.max_test);
    return {std::move(pair.train), std::move(pair.test)};
  }
  if (d.name == "cifar10") {
    auto splits = data::load_cifar10(d.root, options);
    return {std::move(splits.train), std::move(splits.test)};
  }
  auto splits = data::load_bloodmnist(d.root, options);
  return {std::move(splits.train), std::move(splits.test)};
}

model::ArchitectureConfig architecture(const ExperimentConfig& config,
                                       const data::DatasetSplit& train) {
  model::ArchitectureConfig arch;
  arch.channels = train.images.dim(1);
  arch.height = train.images.dim(2);
  arch.width = train.images.dim(3);
  arch.num_classes = train.num_classes;
  arch.final_deconv_kernel = config.final_deconv_kernel;
  arch.width_divisor = config.width_divisor;
  return arch;
}

PretrainOutput pretrain_clients(const ExperimentConfig& config, const Datasets& data,
                                const fs::path& dir) {
  const model::DefenderModel model(architecture(config, data.train));
  const auto& f = config.federation;
  const auto shards =
      fl::partition_data(data.train, f.num_clients, f.partition, f.seed, f.explicit_partition);
  PretrainOutput out;
  for (int c = 0; c < f.num_clients; ++c) {
    const auto result = defense::pretrain_noise(
        model, shards[static_cast<std::size_t>(c)], config.defense,
        derive_seed(config.seed, {kStreamClient, static_cast<std::uint64_t>(c)}));
    const auto file = dir / client_file("noise", c, ".fsh");
    defense::save_noise(file, result.noise);
    defense::write_pretrain_log(dir / client_file("pretrain_log", c, ".csv"), result.log);
    out.noise.push_back(result.noise);
    out.files.push_back(file);
  }
  return out;
}

std::vector<fs::path> cmd_pretrain(const json& resolved) {
  const auto config = parse_config(resolved);
  if (config.defense.kind != defense::DefenseKind::kProposedLearnable) {
    throw ConfigError("defense.kind", std::string("pretrain learns noise parameters and needs "
                                                  "proposed_learnable, got ") +
                                          defense::defense_name(config.defense.kind));
  }
  const auto dir = prepare_dir(resolved, config);
  const auto data = load_datasets(config);
  return pretrain_clients(config, data, dir).files;
}

RunSummary cmd_run(const json& resolved) {
  const auto config = parse_config(resolved);
  const auto dir = prepare_dir(resolved, config);
  json timing;

  auto t0 = Clock::now();
  const auto data = load_datasets(config);
  const model::DefenderModel model(architecture(config, data.train));
  timing["load_seconds"] = seconds_since(t0);

  std::vector<model::NoiseSpec> client_noise;
  if (config.defense.kind == defense::DefenseKind::kProposedLearnable) {
    t0 = Clock::now();
    client_noise = config.noise_file.empty()
                       ? pretrain_clients(config, data, dir).noise
                       : load_client_noise(config.noise_file, config.federation.num_clients);
    timing["pretrain_seconds"] = seconds_since(t0);
  }

  t0 = Clock::now();
  const auto fed = fl::run_federation(config.federation, config.defense, model, data.train,
                                      data.test, client_noise);
  timing["federation_seconds"] = seconds_since(t0);
  json rounds = json::array();
  for (const auto& r : fed.log.rounds) rounds.push_back({{"round", r.round}, {"seconds", r.seconds}});
  timing["rounds"] = rounds;
  model::save_checkpoint(dir / "model.fsh", fed.global, model.arch(),
                         {{"defense", defense::defense_name(config.defense.kind)}});
  fl::write_training_log(dir / "training_log.csv", fed.log);
  fl::write_updates(dir / "updates", fed.captured);

  RunSummary summary;
  summary.dir = dir;
  const bool noisy = config.eval.with_noise && defense::uses_noise(config.defense.kind);
  const auto utility = metrics::evaluate_utility(model, fed.global, data.test, noisy,
                                                 derive_seed(config.seed, {kStreamEval}));
  summary.client_accuracy = utility.accuracy;
  summary.f1 = utility.f1;

  bool probed = false;
  if (config.attack.enabled) {
    t0 = Clock::now();
    const int round = config.attack.round;
    const auto [lower, upper] = data::normalized_bounds(data.train.norm_stats);
    const attack::VictimModel victim{model.classifier(),
                                     model::shared_parameters(fed.attacked_start.front()).tensors(),
                                     lower, upper};
    const auto batch = data::make_batch(fed.victim_data, fed.victim_batch);
    auto recon = attack::invert(fed.captured[static_cast<std::size_t>(round)], victim,
                                model.arch().input_shape(), batch.labels, config.attack.config,
                                config.seed);
    const auto report =
        metrics::evaluate_reconstruction(recon, batch.images, data.train.norm_stats);
    timing["attack_seconds"] = seconds_since(t0);
    summary.attacked = true;
    summary.recon_mse_norm = report.batch_mean_mse;
    summary.recon_mse_px = report.batch_mean_mse_px;
    summary.recon_psnr_db = report.batch_mean_psnr_db;

    const Tensor originals_px = data::denormalize(batch.images, data.train.norm_stats);
    const Tensor recon_px = data::denormalize(report.ordered, data.train.norm_stats);
    io::write_ppm(dir / "reconstruction.ppm", io::make_grid({originals_px, recon_px}));
    NamedTensors tensors;
    tensors.set("original", batch.images);
    tensors.set("reconstruction", report.ordered);
    io::write_archive(dir / "reconstruction.fsh",
                      io::archive_from_tensors(tensors, "reconstruction", {{"round", round}}));

    if (config.eval.probe) {
      t0 = Clock::now();
      ModelParameters clean;
      if (config.defense.kind == defense::DefenseKind::kNone) {
        clean = fed.global;
      } else if (!config.eval.clean_checkpoint.empty()) {
        clean = model::load_checkpoint(config.eval.clean_checkpoint);
      } else {
        clean = train_clean(resolved, model, data);
        model::save_checkpoint(dir / "clean_model.fsh", clean, model.arch(), {{"defense", "none"}});
      }
      summary.probe_accuracy =
          metrics::probe_reconstructions(report.ordered, model, clean, batch.labels);
      probed = true;
      timing["probe_seconds"] = seconds_since(t0);
    }

    json per_image = json::array();
    for (std::size_t i = 0; i < report.mse.size(); ++i) {
      per_image.push_back({{"index", i},
                           {"label", batch.labels[i]},
                           {"mse", report.mse[i]},
                           {"psnr_db", report.psnr[i]}});
    }
    write_json(dir / "recon_report.json",
               {{"round", round},
                {"max_val", report.max_val},
                {"batch_mean_mse", report.batch_mean_mse},
                {"batch_mean_mse_px", report.batch_mean_mse_px},
                {"batch_mean_psnr_db", report.batch_mean_psnr_db},
                {"probe_accuracy", probed ? json(summary.probe_accuracy) : json(nullptr)},
                {"objective", recon.objective},
                {"best_restart", recon.best_restart},
                {"labels", recon.labels},
                {"labels_ambiguous", recon.labels_ambiguous},
                {"images", per_image},
                {"loss_trace", recon.loss_trace}});
  }

  summary.row = {config.dataset.name,
                 defense::defense_name(config.defense.kind),
                 hyperparameter_label(config.defense),
                 std::to_string(config.seed),
                 io::format_number(summary.client_accuracy),
                 io::format_number(summary.f1),
                 number_or_nan(summary.recon_mse_norm, summary.attacked),
                 number_or_nan(summary.recon_mse_px, summary.attacked),
                 number_or_nan(summary.recon_psnr_db, summary.attacked),
                 number_or_nan(summary.probe_accuracy, probed)};
  io::write_csv(dir / "metrics.csv", {metrics_columns(), {summary.row}});
  write_json(dir / "timing.json", timing);
  return summary;
}

SweepSummary cmd_sweep(const json& resolved) {
  const auto config = parse_config(resolved);
  if (config.sweep.parameter.empty()) {
    throw ConfigError("sweep.parameter", "must name the config field to vary");
  }
  if (config.sweep.values.empty()) throw ConfigError("sweep.values", "must not be empty");
  // Every value must address a valid field before any run starts.
  for (const auto& v : config.sweep.values) {
    json probe = resolved;
    set_path(probe, config.sweep.parameter, v);
  }
  const auto dir = prepare_dir(resolved, config);

  json base = resolved;
  if (config.attack.enabled && config.eval.probe &&
      config.defense.kind != defense::DefenseKind::kNone && config.eval.clean_checkpoint.empty()) {
    const auto data = load_datasets(config);
    const model::DefenderModel model(architecture(config, data.train));
    const auto clean = train_clean(resolved, model, data);
    const auto path = dir / "clean_model.fsh";
    model::save_checkpoint(path, clean, model.arch(), {{"defense", "none"}});
    base["eval"]["clean_checkpoint"] = path.string();
  }

  std::vector<std::pair<json, std::vector<std::string>>> rows;
  SweepSummary summary;
  for (std::size_t i = 0; i < config.sweep.values.size(); ++i) {
    const json& value = config.sweep.values[i];
    char name[32];
    std::snprintf(name, sizeof(name), "value_%02zu", i);
    json doc = base;
    try {
      set_path(doc, config.sweep.parameter, value);
      doc["output_dir"] = (dir / name).string();
      doc = resolve_config(doc);
      rows.emplace_back(value, cmd_run(doc).row);
    } catch (const std::exception& e) {
      summary.failures.emplace_back(value.dump(), e.what());
    }
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  summary.table.header = metrics_columns();
  for (auto& r : rows) summary.table.rows.push_back(std::move(r.second));
  summary.csv = dir / "sweep.csv";
  io::write_csv(summary.csv, summary.table);
  json failures = json::array();
  for (const auto& [value, error] : summary.failures) {
    failures.push_back({{"value", json::parse(value)}, {"error", error}});
  }
  write_json(dir / "failures.json", failures);
  return summary;
}

}  // namespace fedshield::experiment
