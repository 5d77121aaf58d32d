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

#include <fstream>
#include <numeric>
#include <algorithm>
#include <set>

#include "fedshield/errors.hpp"
#include "fedshield/fl/federation.hpp"
#include "testing.hpp"

namespace fedshield::fl {
namespace {

using testing::Gen;
using testing::TempDir;
using testing::tiny_arch;

NamedTensors named(double v) {
  NamedTensors n;
  n.set("w", Tensor({2}, v));
  return n;
}

WeightUpdate update_of(const NamedTensors& d) {
  WeightUpdate u;
  u.deltas = d;
  return u;
}

struct FlSetup {
  model::DefenderModel model{tiny_arch(2, 3)};
  data::SyntheticSplits data = data::make_synthetic_pair({48, 2, 9, 9, 3, 2}, 24);
  FederationConfig config;
  defense::DefenseConfig defense;

  FlSetup() {
    config.num_clients = 3;
    config.rounds = 2;
    config.batch_size = 8;
    config.attacked_rounds = {0, 1};
    config.attacked.batch_size = 4;
    config.attacked.local_epochs = 2;
  }
};

TEST(Partition, ExamplesAndErrors) {
  const auto one = partition_indices(5, 1, PartitionScheme::kIidShards, 3);
  EXPECT_EQ(one, (std::vector<std::vector<std::size_t>>{{0, 1, 2, 3, 4}}));
  std::vector<std::size_t> sizes;
  for (const auto& s : partition_indices(10, 3, PartitionScheme::kIidShards, 1)) sizes.push_back(s.size());
  EXPECT_EQ(sizes, (std::vector<std::size_t>{4, 3, 3}));
  EXPECT_THROW(partition_indices(2, 3, PartitionScheme::kIidShards, 1), Error);
  EXPECT_THROW(partition_indices(4, 2, PartitionScheme::kExplicit, 1, {{0, 1}, {}}), Error);
  EXPECT_THROW(partition_indices(4, 2, PartitionScheme::kExplicit, 1, {{0, 1}, {1}}), Error);
  const std::vector<std::vector<std::size_t>> exp{{3, 0}, {1, 2}};
  EXPECT_EQ(partition_indices(4, 2, PartitionScheme::kExplicit, 1, exp), exp);
}

TEST(PartitionProperty, DisjointNearEqualCover) {
  Gen gen(1);
  for (int trial = 0; trial < 100; ++trial) {
    const int k = static_cast<int>(gen.integer(1, 8));
    const auto n = gen.integer(k, 80);
    const auto shards = partition_indices(n, k, PartitionScheme::kIidShards, gen.integer(0, 99));
    std::vector<std::size_t> all;
    std::size_t lo = SIZE_MAX, hi = 0;
    for (const auto& s : shards) {
      all.insert(all.end(), s.begin(), s.end());
      lo = std::min(lo, s.size());
      hi = std::max(hi, s.size());
    }
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> expected(static_cast<std::size_t>(n));
    std::iota(expected.begin(), expected.end(), 0);
    EXPECT_EQ(all, expected);
    EXPECT_LE(hi - lo, 1u);
  }
}

TEST(FedAvg, Examples) {
  const auto a = named(2.5);
  EXPECT_TRUE(fedavg({update_of(a), update_of(a), update_of(a)}, {1, 2, 3}).at("w") == a.at("w"));
  const auto neg = named(-2.5);
  EXPECT_EQ(fedavg({update_of(a), update_of(neg)}, {5, 5}).at("w")[0], 0.0);
  EXPECT_DOUBLE_EQ(fedavg({update_of(named(0)), update_of(named(4))}, {1, 3}).at("w")[1], 3.0);
  NamedTensors other;
  other.set("v", Tensor({2}));
  EXPECT_THROW(fedavg({update_of(a), update_of(other)}, {1, 1}), ShapeError);
  EXPECT_THROW(fedavg({}, {}), Error);
}

// Direct sum_i w_i x_i / sum_i w_i.
TEST(FedAvgProperty, MatchesOracleAndStaysWithinRange) {
  Gen gen(2);
  for (int trial = 0; trial < 100; ++trial) {
    const auto k = static_cast<std::size_t>(gen.integer(1, 6));
    std::vector<WeightUpdate> ups;
    std::vector<double> w;
    for (std::size_t i = 0; i < k; ++i) {
      NamedTensors d;
      d.set("a", gen.tensor({3, 2}, -5, 5));
      d.set("b", gen.tensor({4}, -5, 5));
      ups.push_back(update_of(d));
      w.push_back(static_cast<double>(gen.integer(1, 50)));
    }
    const auto avg = fedavg(ups, w);
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    for (const auto& [name, t] : avg) {
      for (std::size_t j = 0; j < t.size(); ++j) {
        double num = 0.0, lo = INFINITY, hi = -INFINITY;
        for (std::size_t i = 0; i < k; ++i) {
          const double v = ups[i].deltas.at(name)[j];
          num += w[i] * v;
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
        EXPECT_LT(testing::rel_error(t[j], num / total), 1e-12);
        EXPECT_GE(t[j], lo - 1e-12);
        EXPECT_LE(t[j], hi + 1e-12);
      }
    }
  }
}

TEST(FedAvg, SingleParticipantIsBitwise) {
  Gen gen(3);
  NamedTensors d;
  d.set("w", gen.tensor({17}));
  EXPECT_TRUE(fedavg({update_of(d)}, {37}).at("w") == d.at("w"));
}

ClientState make_client(const FlSetup& s, const data::DatasetSplit& data) {
  return ClientState{0, data, s.model.init_parameters(0, s.defense.noise_spec(s.model.latent_size())),
                     defense::DefenseStrategy(s.defense, 1e-3, 5), 5, 0};
}

TEST(LocalRound, ZeroEpochsGiveZeroDeltasAndSharedNamesOnly) {
  FlSetup s;
  auto client = make_client(s, s.data.train);
  const auto global = model::shared_parameters(client.params);
  const auto r = local_round(client, s.model, global, {0, 8, {}, std::nullopt, 0.0}, 0);
  for (const auto& [name, t] : r.update.deltas) {
    EXPECT_TRUE(global.contains(name)) << name;
    for (double v : t.values()) EXPECT_EQ(v, 0.0);
  }
  EXPECT_EQ(r.update.deltas.size(), global.size());
}

TEST(LocalRound, DeterministicAndLossFalls) {
  FlSetup s;
  auto a = make_client(s, s.data.train), b = make_client(s, s.data.train);
  const auto global = model::shared_parameters(a.params);
  const LocalPlan plan{6, 8, {}, std::nullopt, 0.0};
  const auto ra = local_round(a, s.model, global, plan, 0);
  const auto rb = local_round(b, s.model, global, plan, 0);
  EXPECT_TRUE(ra.update.deltas == rb.update.deltas);
  EXPECT_LT(ra.epoch_losses.back(), ra.epoch_losses.front());
}

TEST(LocalRound, OverridePlanRecordsItsSettings) {
  FlSetup s;
  auto client = make_client(s, s.data.train);
  const auto global = model::shared_parameters(client.params);
  const auto r = local_round(client, s.model, global,
                             {5, 4, {0, 1, 2, 3}, optim::OptimizerKind::kSgd, 0.5}, 3);
  EXPECT_EQ(r.update.local_epochs, 5);
  EXPECT_EQ(r.update.batch_size, 4);
  EXPECT_EQ(r.update.num_samples, 4);
  EXPECT_EQ(r.update.client_lr, 0.5);
  EXPECT_EQ(r.update.optimizer, "sgd");
  EXPECT_EQ(r.update.round, 3);
}

TEST(Federation, CapturesVictimEveryRound) {
  FlSetup s;
  s.config.victim_id = 1;
  const auto r = run_federation(s.config, s.defense, s.model, s.data.train, s.data.test);
  ASSERT_EQ(r.captured.size(), 2u);
  ASSERT_EQ(r.log.rounds.size(), 2u);
  ASSERT_EQ(r.attacked_start.size(), 2u);
  for (int i = 0; i < 2; ++i) {
    EXPECT_EQ(r.captured[i].round, i);
    EXPECT_EQ(r.captured[i].client, 1);
    EXPECT_EQ(r.captured[i].local_epochs, 2);
    EXPECT_EQ(r.captured[i].batch_size, 4);
  }
  EXPECT_EQ(r.victim_batch.size(), 4u);
  std::set<int> labels;
  for (auto i : r.victim_batch) labels.insert(r.victim_data.labels[i]);
  EXPECT_EQ(labels.size(), 3u);
}

TEST(Federation, SingleClientMatchesCentralizedBitwise) {
  FlSetup s;
  s.config.num_clients = 1;
  s.config.rounds = 3;
  s.config.local_epochs = 2;
  s.config.attacked_rounds = {};
  for (auto kind : {defense::DefenseKind::kNone, defense::DefenseKind::kProposedFixed}) {
    s.defense.kind = kind;
    const auto fed = run_federation(s.config, s.defense, s.model, s.data.train, s.data.test);
    const auto central = train_centralized(s.config, s.defense, s.model, s.data.train,
                                           s.config.rounds * s.config.local_epochs);
    EXPECT_TRUE(fed.global == central) << defense::defense_name(kind);
  }
}

TEST(Federation, ThreadsDoNotChangeResults) {
  FlSetup s;
  s.defense.kind = defense::DefenseKind::kProposedFixed;
  const auto one = run_federation(s.config, s.defense, s.model, s.data.train, s.data.test);
  s.config.threads = 3;
  const auto three = run_federation(s.config, s.defense, s.model, s.data.train, s.data.test);
  EXPECT_TRUE(one.global == three.global);
  EXPECT_TRUE(one.captured[0].deltas == three.captured[0].deltas);
}

TEST(Federation, GlobalAccuracyBeatsChance) {
  FlSetup s;
  s.config.rounds = 20;
  s.config.attacked_rounds = {};
  s.config.num_clients = 2;
  const auto r = run_federation(s.config, s.defense, s.model, s.data.train, s.data.test);
  EXPECT_GT(r.log.rounds.back().global_accuracy, 1.0 / 3.0);
}

TEST(Federation, ConfigValidation) {
  FederationConfig c;
  c.victim_id = 4;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.attacked_rounds = {1};
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.threads = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Federation, UpdatesAndLogPersist) {
  FlSetup s;
  const auto r = run_federation(s.config, s.defense, s.model, s.data.train, s.data.test);
  TempDir dir;
  write_updates(dir / "updates", r.captured);
  const auto back = read_updates(dir / "updates");
  ASSERT_EQ(back.size(), r.captured.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_TRUE(back[i].deltas == r.captured[i].deltas);
    EXPECT_EQ(back[i].round, r.captured[i].round);
    EXPECT_EQ(back[i].client_lr, r.captured[i].client_lr);
    EXPECT_EQ(back[i].local_epochs, r.captured[i].local_epochs);
  }
  write_training_log(dir / "log.csv", r.log);
  std::ifstream in(dir / "log.csv");
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, 1 + s.config.rounds);
}

}  // namespace
}  // namespace fedshield::fl
