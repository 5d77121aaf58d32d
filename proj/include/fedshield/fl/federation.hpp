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
#include <vector>

#include "fedshield/data/dataset.hpp"
#include "fedshield/defense/defense.hpp"
#include "fedshield/model/defender.hpp"

namespace fedshield::fl {

enum class PartitionScheme { kIidShards, kExplicit };

PartitionScheme parse_partition(const std::string& name);

// Disjoint cover of `split`. iid_shards shuffles with `seed` and cuts
// near-equal shards (sizes differ by at most one), each kept in ascending
// index order. kExplicit uses `explicit_indices` verbatim.
std::vector<std::vector<std::size_t>> partition_indices(
    std::int64_t n, int num_clients, PartitionScheme scheme, std::uint64_t seed,
    const std::vector<std::vector<std::size_t>>& explicit_indices = {});

std::vector<data::DatasetSplit> partition_data(
    const data::DatasetSplit& split, int num_clients, PartitionScheme scheme, std::uint64_t seed,
    const std::vector<std::vector<std::size_t>>& explicit_indices = {});

// Change of the shared parameters over one local round.
struct WeightUpdate {
  NamedTensors deltas;
  int round = 0;
  int client = 0;
  int local_epochs = 0;
  std::int64_t batch_size = 0;
  double client_lr = 0.0;
  std::int64_t num_samples = 0;
  std::string optimizer;
};

// Sample-count-weighted elementwise mean. Weights are normalized first so a
// single participant is returned bit for bit.
NamedTensors weighted_mean(const std::vector<const NamedTensors*>& items,
                           const std::vector<double>& weights);
NamedTensors fedavg(const std::vector<WeightUpdate>& updates, const std::vector<double>& weights);

// Plan for the victim's local round when it is attacked.
struct AttackedRoundPlan {
  std::int64_t batch_size = 8;
  int local_epochs = 5;
  optim::OptimizerKind optimizer = optim::OptimizerKind::kSgd;
  double lr = 0.0;  // 0 keeps the client learning rate
};

struct FederationConfig {
  int num_clients = 4;
  int rounds = 1;
  int local_epochs = 1;
  std::int64_t batch_size = 128;
  double client_lr = 1e-3;
  PartitionScheme partition = PartitionScheme::kIidShards;
  std::vector<std::vector<std::size_t>> explicit_partition;
  int victim_id = 0;
  std::vector<int> attacked_rounds{0};
  AttackedRoundPlan attacked;
  std::uint64_t seed = 0;
  int threads = 1;
  // Evaluate global accuracy with noise sampled (proposed defenses only).
  bool eval_with_noise = true;
  // Send decoder and noise groups to the server as well.
  bool share_private_groups = false;

  void validate() const;
};

struct ClientState {
  int id = 0;
  data::DatasetSplit data;
  ModelParameters params;
  defense::DefenseStrategy strategy;
  std::uint64_t seed = 0;
  std::uint64_t epochs_done = 0;
};

struct LocalPlan {
  int epochs = 1;
  std::int64_t batch_size = 128;
  // Train on these rows of the client split only (all rows when empty).
  std::vector<std::size_t> subset;
  // Replaces the strategy's optimizer for this round only.
  std::optional<optim::OptimizerKind> optimizer;
  double lr = 0.0;  // learning rate of the replacement optimizer; 0 keeps the client's
};

struct LocalResult {
  WeightUpdate update;
  std::vector<double> epoch_losses;
};

// Loads the global shared parameters, trains, and reports the delta of the
// shared groups.
LocalResult local_round(ClientState& client, const model::DefenderModel& model,
                        const ModelParameters& global_shared, const LocalPlan& plan, int round,
                        bool share_private_groups = false);

struct RoundLog {
  int round = 0;
  double global_accuracy = 0.0;
  std::vector<double> client_losses;  // mean loss of each client's last epoch
  double seconds = 0.0;
  std::uint64_t seed = 0;
};

struct TrainingLog {
  std::vector<RoundLog> rounds;
};

// Deterministic columns only; timings go to write_timing.
void write_training_log(const std::filesystem::path& path, const TrainingLog& log);
void write_timing(const std::filesystem::path& path, const TrainingLog& log);

struct FederationResult {
  ModelParameters global;  // shared groups plus the victim's private groups
  TrainingLog log;
  std::vector<WeightUpdate> captured;  // victim update of every round
  data::DatasetSplit victim_data;
  // Rows of victim_data used in attacked rounds (one batch).
  std::vector<std::size_t> victim_batch;
  // Global shared parameters at the start of each attacked round, in the
  // order of FederationConfig::attacked_rounds.
  std::vector<ModelParameters> attacked_start;
};

// Picks `batch_size` rows of `split`: the first row of each label in order,
// then the remaining rows in order if labels run out.
std::vector<std::size_t> select_victim_batch(const data::DatasetSplit& split,
                                             std::int64_t batch_size);

// `client_noise` provides per-client noise specs (e.g. from pretraining); when
// empty the defense config's own spec is used.
FederationResult run_federation(const FederationConfig& config,
                                const defense::DefenseConfig& defense,
                                const model::DefenderModel& model, const data::DatasetSplit& train,
                                const data::DatasetSplit& test,
                                const std::vector<model::NoiseSpec>& client_noise = {});

// Single-process reference: the same initialization, batch order and steps
// as client 0 of a one-client federation.
ModelParameters train_centralized(const FederationConfig& config,
                                  const defense::DefenseConfig& defense,
                                  const model::DefenderModel& model,
                                  const data::DatasetSplit& train, int epochs);

double evaluate_accuracy(const model::DefenderModel& model, const ModelParameters& params,
                         const data::DatasetSplit& split, bool with_noise, std::uint64_t seed);

void write_updates(const std::filesystem::path& dir, const std::vector<WeightUpdate>& updates);
std::vector<WeightUpdate> read_updates(const std::filesystem::path& dir);

}  // namespace fedshield::fl
