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

#include "fedshield/fl/federation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <fstream>
#include <numeric>
#include <set>
#include <thread>

#include "fedshield/errors.hpp"
#include "fedshield/io/archive.hpp"
#include "fedshield/io/csv.hpp"

namespace fedshield::fl {
namespace {

NamedTensors shared_view(const ModelParameters& params, bool share_private_groups) {
  if (share_private_groups) return params.tensors();
  return model::shared_parameters(params).tensors();
}

// Runs fn(i) for i in [0, n) on up to `threads` workers; rethrows the first error.
template <class Fn>
void parallel_for(int n, int threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  std::vector<std::thread> pool;
  for (int t = 0; t < std::min(threads, n); ++t) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::uint64_t client_seed(std::uint64_t seed, int client) {
  return derive_seed(seed, {kStreamClient, static_cast<std::uint64_t>(client)});
}

}  // namespace

PartitionScheme parse_partition(const std::string& name) {
  if (name == "iid_shards") return PartitionScheme::kIidShards;
  if (name == "explicit") return PartitionScheme::kExplicit;
  throw ConfigError("federation.partition", "unknown scheme '" + name + "'");
}

std::vector<std::vector<std::size_t>> partition_indices(
    std::int64_t n, int num_clients, PartitionScheme scheme, std::uint64_t seed,
    const std::vector<std::vector<std::size_t>>& explicit_indices) {
  if (num_clients < 1) throw Error("partition: num_clients must be at least 1");
  if (n < num_clients) {
    throw Error("partition: " + std::to_string(n) + " samples cannot cover " +
                std::to_string(num_clients) + " clients");
  }
  std::vector<std::vector<std::size_t>> shards;
  if (scheme == PartitionScheme::kExplicit) {
    if (explicit_indices.size() != static_cast<std::size_t>(num_clients)) {
      throw Error("partition: explicit partition lists " + std::to_string(explicit_indices.size()) +
                  " clients, expected " + std::to_string(num_clients));
    }
    std::vector<bool> seen(static_cast<std::size_t>(n), false);
    for (const auto& shard : explicit_indices) {
      if (shard.empty()) throw Error("partition: empty client share");
      for (auto i : shard) {
        if (i >= seen.size() || seen[i]) {
          throw Error("partition: explicit indices must be disjoint and below N");
        }
        seen[i] = true;
      }
    }
    return explicit_indices;
  }
  std::vector<std::size_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  if (num_clients > 1) {
    Rng rng = make_rng(seed, {kStreamPartition});
    for (std::size_t i = order.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(order[i - 1], order[pick(rng)]);
    }
  }
  const auto base = n / num_clients, extra = n % num_clients;
  std::size_t start = 0;
  for (int c = 0; c < num_clients; ++c) {
    const auto len = static_cast<std::size_t>(base + (c < extra ? 1 : 0));
    std::vector<std::size_t> shard(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(start + len));
    std::sort(shard.begin(), shard.end());
    shards.push_back(std::move(shard));
    start += len;
  }
  return shards;
}

std::vector<data::DatasetSplit> partition_data(
    const data::DatasetSplit& split, int num_clients, PartitionScheme scheme, std::uint64_t seed,
    const std::vector<std::vector<std::size_t>>& explicit_indices) {
  std::vector<data::DatasetSplit> out;
  const auto shards = partition_indices(split.size(), num_clients, scheme, seed, explicit_indices);
  for (std::size_t c = 0; c < shards.size(); ++c) {
    out.push_back(data::subset(split, shards[c], split.name + "-client" + std::to_string(c)));
  }
  return out;
}

NamedTensors weighted_mean(const std::vector<const NamedTensors*>& items,
                           const std::vector<double>& weights) {
  if (items.empty()) throw Error("weighted_mean: no inputs");
  if (weights.size() != items.size()) throw Error("weighted_mean: one weight per input required");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw Error("weighted_mean: weights must be non-negative");
    total += w;
  }
  if (!(total > 0.0)) throw Error("weighted_mean: weights sum to zero");
  for (const auto* item : items) require_same_layout(*items.front(), *item, "weighted_mean");
  NamedTensors out;
  for (const auto& [name, t] : *items.front()) out.set(name, Tensor::zeros_like(t));
  for (std::size_t i = 0; i < items.size(); ++i) {
    const double f = weights[i] / total;
    for (auto& [name, t] : out) t.add_scaled(items[i]->at(name), f);
  }
  return out;
}

NamedTensors fedavg(const std::vector<WeightUpdate>& updates, const std::vector<double>& weights) {
  std::vector<const NamedTensors*> items;
  for (const auto& u : updates) items.push_back(&u.deltas);
  return weighted_mean(items, weights);
}

void FederationConfig::validate() const {
  if (num_clients < 1) throw ConfigError("federation.num_clients", "must be at least 1");
  if (rounds < 1) throw ConfigError("federation.rounds", "must be at least 1");
  if (local_epochs < 0) throw ConfigError("federation.local_epochs", "must be >= 0");
  if (batch_size < 1) throw ConfigError("federation.batch_size", "must be positive");
  if (!(client_lr > 0.0)) throw ConfigError("federation.client_lr", "must be positive");
  if (victim_id < 0 || victim_id >= num_clients) {
    throw ConfigError("federation.victim_id", "must lie in [0, num_clients)");
  }
  for (int r : attacked_rounds) {
    if (r < 0 || r >= rounds) throw ConfigError("attack.rounds", "round outside [0, rounds)");
  }
  if (attacked.batch_size < 1) throw ConfigError("attack.batch_size", "must be positive");
  if (attacked.local_epochs < 0) throw ConfigError("attack.local_epochs", "must be >= 0");
  if (!(attacked.lr >= 0.0)) throw ConfigError("attack.victim_lr", "must be >= 0");
  if (threads < 1) throw ConfigError("threads", "must be at least 1");
}

LocalResult local_round(ClientState& client, const model::DefenderModel& model,
                        const ModelParameters& global_shared, const LocalPlan& plan, int round,
                        bool share_private_groups) {
  ModelParameters params = model::merge_parameters(global_shared, client.params);
  const NamedTensors before = shared_view(params, share_private_groups);
  const data::DatasetSplit& data = client.data;
  data::DatasetSplit subset_split;
  const data::DatasetSplit* train = &data;
  if (!plan.subset.empty()) {
    subset_split = data::subset(data, plan.subset, data.name + "-subset");
    train = &subset_split;
  }
  std::optional<optim::Optimizer> override;
  if (plan.optimizer) {
    override.emplace(*plan.optimizer, plan.lr > 0.0 ? plan.lr : client.strategy.optimizer().lr());
  }

  LocalResult result;
  const auto bs = std::min(plan.batch_size, train->size());
  for (int e = 0; e < plan.epochs; ++e) {
    double sum = 0.0;
    int steps = 0;
    for (const auto& idx :
         data::batch_indices(train->size(), bs, client.seed, client.epochs_done, true)) {
      if (static_cast<std::int64_t>(idx.size()) < client.strategy.min_batch()) continue;
      const auto batch = data::make_batch(*train, idx);
      const auto r = client.strategy.step(model, params, batch, override ? &*override : nullptr);
      sum += r.loss.value;
      ++steps;
    }
    ++client.epochs_done;
    result.epoch_losses.push_back(steps ? sum / steps : 0.0);
  }
  client.params = params;

  WeightUpdate& u = result.update;
  const NamedTensors after = shared_view(params, share_private_groups);
  for (const auto& [name, t] : after) u.deltas.set(name, t - before.at(name));
  u.round = round;
  u.client = client.id;
  u.local_epochs = plan.epochs;
  u.batch_size = bs;
  u.client_lr = override ? override->lr() : client.strategy.optimizer().lr();
  u.num_samples = train->size();
  u.optimizer = optim::optimizer_name(plan.optimizer ? *plan.optimizer
                                                     : client.strategy.optimizer().kind());
  return result;
}

void write_training_log(const std::filesystem::path& path, const TrainingLog& log) {
  io::CsvTable t;
  t.header = {"round", "global_acc", "mean_client_loss", "seed"};
  const std::size_t clients = log.rounds.empty() ? 0 : log.rounds.front().client_losses.size();
  for (std::size_t c = 0; c < clients; ++c) t.header.push_back("client" + std::to_string(c) + "_loss");
  for (const auto& r : log.rounds) {
    double mean = 0.0;
    for (double l : r.client_losses) mean += l;
    if (!r.client_losses.empty()) mean /= static_cast<double>(r.client_losses.size());
    std::vector<std::string> row{std::to_string(r.round), io::format_number(r.global_accuracy),
                                 io::format_number(mean), std::to_string(r.seed)};
    for (double l : r.client_losses) row.push_back(io::format_number(l));
    t.rows.push_back(std::move(row));
  }
  io::write_csv(path, t);
}

void write_timing(const std::filesystem::path& path, const TrainingLog& log) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : log.rounds) j.push_back({{"round", r.round}, {"seconds", r.seconds}});
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream(path) << j.dump(2) << "\n";
}

std::vector<std::size_t> select_victim_batch(const data::DatasetSplit& split,
                                             std::int64_t batch_size) {
  if (batch_size < 1 || batch_size > split.size()) {
    throw Error("victim batch of " + std::to_string(batch_size) + " does not fit a shard of " +
                std::to_string(split.size()));
  }
  std::vector<std::size_t> chosen;
  std::set<int> labels;
  std::vector<bool> used(static_cast<std::size_t>(split.size()), false);
  for (std::size_t i = 0; i < used.size() && static_cast<std::int64_t>(chosen.size()) < batch_size;
       ++i) {
    if (labels.insert(split.labels[i]).second) {
      chosen.push_back(i);
      used[i] = true;
    }
  }
  for (std::size_t i = 0; i < used.size() && static_cast<std::int64_t>(chosen.size()) < batch_size;
       ++i) {
    if (!used[i]) chosen.push_back(i);
  }
  return chosen;
}

double evaluate_accuracy(const model::DefenderModel& model, const ModelParameters& params,
                         const data::DatasetSplit& split, bool with_noise, std::uint64_t seed) {
  if (split.size() == 0) throw Error("evaluate_accuracy: empty split");
  Rng rng = make_rng(seed, {kStreamEval});
  const auto preds = model.predict(split.images, params, with_noise ? &rng : nullptr);
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == split.labels[i];
  return static_cast<double>(correct) / static_cast<double>(split.size());
}

FederationResult run_federation(const FederationConfig& config,
                                const defense::DefenseConfig& defense,
                                const model::DefenderModel& model, const data::DatasetSplit& train,
                                const data::DatasetSplit& test,
                                const std::vector<model::NoiseSpec>& client_noise) {
  config.validate();
  defense.validate();
  if (!client_noise.empty() && client_noise.size() != static_cast<std::size_t>(config.num_clients)) {
    throw Error("run_federation: one noise spec per client required");
  }
  const auto shards = partition_data(train, config.num_clients, config.partition, config.seed,
                                     config.explicit_partition);
  std::vector<ClientState> clients;
  for (int c = 0; c < config.num_clients; ++c) {
    const auto noise = client_noise.empty() ? defense.noise_spec(model.latent_size())
                                            : client_noise[static_cast<std::size_t>(c)];
    const auto seed = client_seed(config.seed, c);
    clients.push_back(ClientState{c, shards[static_cast<std::size_t>(c)],
                                  model.init_parameters(config.seed, noise),
                                  defense::DefenseStrategy(defense, config.client_lr, seed), seed,
                                  0});
  }
  ModelParameters global = model::shared_parameters(clients.front().params);
  if (config.share_private_groups) global = clients.front().params;

  FederationResult result;
  result.victim_data = clients[static_cast<std::size_t>(config.victim_id)].data;
  if (!config.attacked_rounds.empty()) {
    result.victim_batch = select_victim_batch(result.victim_data, config.attacked.batch_size);
  }
  const bool eval_noise = config.eval_with_noise && defense::uses_noise(defense.kind);

  for (int round = 0; round < config.rounds; ++round) {
    const auto t0 = std::chrono::steady_clock::now();
    const bool attacked = std::find(config.attacked_rounds.begin(), config.attacked_rounds.end(),
                                    round) != config.attacked_rounds.end();
    if (attacked) result.attacked_start.push_back(global);
    std::vector<LocalResult> local(clients.size());
    parallel_for(config.num_clients, config.threads, [&](int c) {
      LocalPlan plan{config.local_epochs, config.batch_size, {}, std::nullopt, 0.0};
      if (attacked && c == config.victim_id) {
        plan = {config.attacked.local_epochs, config.attacked.batch_size, result.victim_batch,
                config.attacked.optimizer, config.attacked.lr};
      }
      local[static_cast<std::size_t>(c)] =
          local_round(clients[static_cast<std::size_t>(c)], model, global, plan, round,
                      config.share_private_groups);
    });

    std::vector<const NamedTensors*> weights_after;
    std::vector<NamedTensors> client_shared;
    std::vector<double> counts;
    RoundLog entry;
    entry.round = round;
    entry.seed = config.seed;
    for (const auto& c : clients) {
      client_shared.push_back(shared_view(c.params, config.share_private_groups));
      counts.push_back(static_cast<double>(c.data.size()));
    }
    for (const auto& s : client_shared) weights_after.push_back(&s);
    for (const auto& l : local) {
      entry.client_losses.push_back(l.epoch_losses.empty() ? 0.0 : l.epoch_losses.back());
    }
    const NamedTensors averaged = weighted_mean(weights_after, counts);
    global.overlay(averaged);
    result.captured.push_back(local[static_cast<std::size_t>(config.victim_id)].update);

    const auto eval_params =
        model::merge_parameters(global, clients[static_cast<std::size_t>(config.victim_id)].params);
    entry.global_accuracy =
        evaluate_accuracy(model, eval_params, test, eval_noise,
                          derive_seed(config.seed, {static_cast<std::uint64_t>(round)}));
    entry.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.rounds.push_back(entry);
  }
  result.global =
      model::merge_parameters(global, clients[static_cast<std::size_t>(config.victim_id)].params);
  return result;
}

ModelParameters train_centralized(const FederationConfig& config,
                                  const defense::DefenseConfig& defense,
                                  const model::DefenderModel& model,
                                  const data::DatasetSplit& train, int epochs) {
  defense.validate();
  const auto seed = client_seed(config.seed, 0);
  ModelParameters params =
      model.init_parameters(config.seed, defense.noise_spec(model.latent_size()));
  defense::DefenseStrategy strategy(defense, config.client_lr, seed);
  const auto bs = std::min(config.batch_size, train.size());
  for (int e = 0; e < epochs; ++e) {
    for (const auto& idx :
         data::batch_indices(train.size(), bs, seed, static_cast<std::uint64_t>(e), true)) {
      if (static_cast<std::int64_t>(idx.size()) < strategy.min_batch()) continue;
      strategy.step(model, params, data::make_batch(train, idx));
    }
  }
  return params;
}

void write_updates(const std::filesystem::path& dir, const std::vector<WeightUpdate>& updates) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& u : updates) {
    char name[64];
    std::snprintf(name, sizeof(name), "round_%04d_client_%d.fsh", u.round, u.client);
    nlohmann::json meta = {{"round", u.round},         {"client", u.client},
                           {"local_epochs", u.local_epochs}, {"batch_size", u.batch_size},
                           {"client_lr", u.client_lr}, {"num_samples", u.num_samples},
                           {"optimizer", u.optimizer}};
    io::write_archive(dir / name, io::archive_from_tensors(u.deltas, "delta", meta));
    meta["file"] = name;
    manifest.push_back(meta);
  }
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << "\n";
}

std::vector<WeightUpdate> read_updates(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IngestError((dir / "manifest.json").string() + ": missing update manifest");
  const auto manifest = nlohmann::json::parse(in);
  std::vector<WeightUpdate> out;
  for (const auto& m : manifest) {
    WeightUpdate u;
    u.deltas = io::tensors_from_archive(io::read_archive(dir / m.at("file").get<std::string>()));
    u.round = m.at("round");
    u.client = m.at("client");
    u.local_epochs = m.at("local_epochs");
    u.batch_size = m.at("batch_size");
    u.client_lr = m.at("client_lr");
    u.num_samples = m.at("num_samples");
    u.optimizer = m.at("optimizer");
    out.push_back(std::move(u));
  }
  return out;
}

}  // namespace fedshield::fl
