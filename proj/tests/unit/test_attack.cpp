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

#include <algorithm>
#include <numeric>

#include "fedshield/attack/inversion.hpp"
#include "fedshield/errors.hpp"
#include "fedshield/objectives/losses.hpp"
#include "testing.hpp"

namespace fedshield::attack {
namespace {

using testing::Gen;
using testing::max_abs_diff;
using testing::max_fd_error;
using testing::tiny_arch;

// Cross-entropy gradient of `network` at (x, labels).
NamedTensors true_gradient(const nn::Sequential& network, const NamedTensors& params,
                           const Tensor& x, const std::vector<int>& labels) {
  nn::SequentialTrace trace;
  const Tensor logits = network.forward(x, params, &trace);
  const auto ce = objectives::cross_entropy(labels, logits);
  NamedTensors g;
  network.backward(ce.grad, trace, params, &g, false);
  return g;
}

fl::WeightUpdate sgd_update(const NamedTensors& gradient, double lr) {
  fl::WeightUpdate u;
  for (const auto& [name, g] : gradient) u.deltas.set(name, g * -lr);
  u.client_lr = lr;
  u.local_epochs = 1;
  return u;
}

struct LinearFixture {
  Shape image{1, 3, 3};
  int classes = 4;
  VictimModel victim;
  Tensor x;
  std::vector<int> labels{2};

  explicit LinearFixture(std::uint64_t seed) {
    victim.network = nn::Sequential({nn::FlattenLayer{}, nn::LinearLayer{"fc", 9, classes}});
    Rng rng = make_rng(seed);
    victim.network.init_parameters(victim.params, rng);
    victim.lower = {-2.0};
    victim.upper = {2.0};
    Gen gen(seed);
    x = gen.tensor({1, 1, 3, 3});
  }
};

struct DefenderFixture {
  model::DefenderModel model{tiny_arch(2, 3)};
  VictimModel victim;
  Tensor x;
  std::vector<int> labels{0, 2};

  DefenderFixture() {
    const auto params = model.init_parameters(3, model::NoiseSpec::fixed(0.0, 0.1));
    victim.network = model.classifier();
    victim.params = model::shared_parameters(params).tensors();
    victim.lower = {-2.0, -2.0};
    victim.upper = {2.0, 2.0};
    Gen gen(4);
    x = gen.tensor({2, 2, 9, 9});
  }
};

TEST(PseudoGradient, SingleSgdStepRecoversTheGradient) {
  DefenderFixture f;
  const auto g = true_gradient(f.victim.network, f.victim.params, f.x, f.labels);
  // The deltas come from a real parameter update, so rounding enters as it would in FL.
  fl::WeightUpdate u;
  u.client_lr = 0.1;
  for (const auto& [name, grad] : g) {
    Tensor after = f.victim.params.at(name);
    after.add_scaled(grad, -0.1);
    u.deltas.set(name, after - f.victim.params.at(name));
  }
  const auto pg = pseudo_gradient(u);
  EXPECT_FALSE(pg.degenerate);
  for (const auto& [name, grad] : g) {
    EXPECT_LT(max_abs_diff(pg.gradient.at(name), grad), 1e-14) << name;
  }
}

TEST(PseudoGradient, ScaleAndDegenerateCases) {
  DefenderFixture f;
  const auto g = true_gradient(f.victim.network, f.victim.params, f.x, f.labels);
  const auto u = sgd_update(g, 0.01);
  auto scaled = u;
  for (auto& [name, d] : scaled.deltas) d *= 3.7;
  const auto a = pseudo_gradient(u).gradient, b = pseudo_gradient(scaled).gradient;
  for (const auto& [name, t] : a) EXPECT_LT(max_abs_diff(b.at(name), t * 3.7), 1e-12);
  EXPECT_NEAR(objectives::cosine_grad_distance(a, g).value,
              objectives::cosine_grad_distance(b, g).value, 1e-12);
  auto zero = u;
  for (auto& [name, d] : zero.deltas) d.fill(0.0);
  EXPECT_TRUE(pseudo_gradient(zero).degenerate);
  zero.client_lr = 0.0;
  EXPECT_THROW(pseudo_gradient(zero), Error);
}

TEST(PseudoGradient, MultiEpochUpdateCorrelatesWithBatchGradient) {
  model::DefenderModel model(tiny_arch(2, 3));
  const auto split = data::make_synthetic({16, 2, 9, 9, 3, 5});
  defense::DefenseConfig none;
  fl::ClientState client{0, split, model.init_parameters(1, none.noise_spec(model.latent_size())),
                         defense::DefenseStrategy(none, 1e-2, 2), 2, 0};
  const auto global = model::shared_parameters(client.params);
  const auto r = fl::local_round(client, model, global,
                                 {5, 4, {0, 1, 2, 3}, optim::OptimizerKind::kSgd, 0.0}, 0);
  const auto batch = data::make_batch(split, {0, 1, 2, 3});
  const auto g = true_gradient(model.classifier(), global.tensors(), batch.images, batch.labels);
  NamedTensors target;
  for (const auto& [name, t] : pseudo_gradient(r.update).gradient) target.set(name, t);
  EXPECT_LT(objectives::cosine_grad_distance(target, g).value, 1.0);
}

// Shallow convolutional victim whose input gradients are large enough for
// finite differences.
VictimModel shallow_victim() {
  VictimModel v;
  v.network = nn::Sequential({nn::Conv2dLayer{"c1", 2, 4, 3, 1, {1, 1}}, nn::ReluLayer{},
                              nn::MaxPool2dLayer{3}, nn::FlattenLayer{},
                              nn::LinearLayer{"fc", 36, 3}});
  Rng rng = make_rng(8);
  v.network.init_parameters(v.params, rng);
  v.lower = {-2.0, -2.0};
  v.upper = {2.0, 2.0};
  return v;
}

TEST(AttackObjective, GradientMatchesFiniteDifferences) {
  const VictimModel victim = shallow_victim();
  const std::vector<int> labels{0, 2};
  Gen gen(5);
  const auto target = true_gradient(victim.network, victim.params, gen.tensor({2, 2, 9, 9}), labels);
  const Tensor probe = gen.tensor({2, 2, 9, 9});
  for (double tv : {0.0, 1e-2}) {
    const auto obj = attack_objective(victim, probe, labels, target, tv);
    EXPECT_NEAR(obj.value, obj.cosine + tv * obj.tv, 1e-15);
    auto fn = [&](const Tensor& x) {
      return attack_objective(victim, x, labels, target, tv, false).value;
    };
    EXPECT_LT(max_fd_error(fn, probe, obj.grad, gen, 48, 1e-6), 1e-4) << tv;
  }
}

TEST(LinearFixture, ClosedFormOracleRecoversInput) {
  LinearFixture f(1);
  const auto g = true_gradient(f.victim.network, f.victim.params, f.x, f.labels);
  const Tensor& gw = g.at("fc.weight");
  const Tensor& gb = g.at("fc.bias");
  const auto k = static_cast<std::size_t>(f.labels[0]);
  for (std::size_t j = 0; j < 9; ++j) EXPECT_NEAR(gw[k * 9 + j] / gb[k], f.x[j], 1e-12);
}

TEST(LinearFixture, InvertRecoversInput) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    LinearFixture f(seed);
    const auto update = sgd_update(true_gradient(f.victim.network, f.victim.params, f.x, f.labels), 0.1);
    AttackConfig cfg;
    cfg.iterations = 1000;
    cfg.lr = 0.1;
    cfg.tv_weight = 0.0;
    cfg.batch_size = 1;
    const auto r = invert(update, f.victim, f.image, f.labels, cfg, seed);
    double mse = 0.0;
    for (std::size_t j = 0; j < 9; ++j) mse += std::pow(r.images[j] - f.x[j], 2) / 9.0;
    EXPECT_LT(mse, 1e-3) << seed;
  }
}

TEST(Invert, ZeroIterationsReturnsInitialization) {
  DefenderFixture f;
  const auto update = sgd_update(true_gradient(f.victim.network, f.victim.params, f.x, f.labels), 0.1);
  AttackConfig cfg;
  cfg.iterations = 0;
  const auto r = invert(update, f.victim, {2, 9, 9}, f.labels, cfg, 17);
  Rng rng = make_rng(17, {kStreamAttack, 0});
  Tensor init = randn({2, 2, 9, 9}, rng);
  for (auto& v : init.values()) v = std::clamp(v, -2.0, 2.0);
  EXPECT_TRUE(r.images == init);
}

TEST(Invert, DeterministicScaleInvariantAndInRange) {
  DefenderFixture f;
  const auto update = sgd_update(true_gradient(f.victim.network, f.victim.params, f.x, f.labels), 0.1);
  AttackConfig cfg;
  cfg.iterations = 30;
  cfg.restarts = 2;
  cfg.init = InitMode::kUniform;
  const auto a = invert(update, f.victim, {2, 9, 9}, f.labels, cfg, 5);
  const auto b = invert(update, f.victim, {2, 9, 9}, f.labels, cfg, 5);
  EXPECT_TRUE(a.images == b.images);
  auto scaled = update;
  for (auto& [name, d] : scaled.deltas) d *= 4.0;
  const auto c = invert(scaled, f.victim, {2, 9, 9}, f.labels, cfg, 5);
  EXPECT_TRUE(a.images == c.images);
  for (double v : a.images.values()) {
    EXPECT_GE(v, -2.0);
    EXPECT_LE(v, 2.0);
  }
  cfg.threads = 2;
  const auto d = invert(update, f.victim, {2, 9, 9}, f.labels, cfg, 5);
  EXPECT_TRUE(a.images == d.images);
  EXPECT_EQ(a.restart_objective.size(), 2u);
  EXPECT_EQ(a.objective, a.restart_objective[static_cast<std::size_t>(a.best_restart)]);
}

TEST(Invert, BestSoFarObjectiveIsNonIncreasing) {
  DefenderFixture f;
  const auto update = sgd_update(true_gradient(f.victim.network, f.victim.params, f.x, f.labels), 0.1);
  AttackConfig cfg;
  cfg.iterations = 60;
  const auto r = invert(update, f.victim, {2, 9, 9}, f.labels, cfg, 6);
  double best = INFINITY;
  std::vector<double> running;
  for (double v : r.loss_trace) running.push_back(best = std::min(best, v));
  EXPECT_TRUE(std::is_sorted(running.rbegin(), running.rend()));
  EXPECT_EQ(r.objective, best);
  EXPECT_LT(r.objective, r.loss_trace.front());
}

TEST(Invert, ConfigErrors) {
  AttackConfig cfg;
  cfg.tv_weight = -1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.restarts = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_THROW(parse_init("zeros"), ConfigError);
  EXPECT_THROW(parse_label_mode("guess"), ConfigError);
}

TEST(InferLabels, SingleSampleUniqueNegativeRow) {
  for (int label = 0; label < 4; ++label) {
    LinearFixture f(static_cast<std::uint64_t>(10 + label));
    Gen gen(label);
    const Tensor x = gen.tensor({1, 1, 3, 3}, 0.0, 1.0);
    const auto g = true_gradient(f.victim.network, f.victim.params, x, {label});
    const auto inferred = infer_labels(g, "fc.weight", 1);
    EXPECT_EQ(inferred.labels, std::vector<int>{label});
    EXPECT_FALSE(inferred.ambiguous);
  }
}

TEST(InferLabels, ZeroGradientAndOversizedBatch) {
  NamedTensors zero;
  zero.set("fc.weight", Tensor({3, 2}));
  const auto z = infer_labels(zero, "fc.weight");
  EXPECT_TRUE(z.labels.empty());
  EXPECT_TRUE(z.ambiguous);
  NamedTensors g;
  g.set("fc.weight", Tensor({3, 1}, std::vector<double>{-1, 2, -3}));
  const auto big = infer_labels(g, "fc.weight", 5);
  EXPECT_EQ(big.labels.size(), 5u);
  EXPECT_TRUE(big.ambiguous);
  const auto exact = infer_labels(g, "fc.weight", 2);
  EXPECT_EQ(exact.labels, (std::vector<int>{0, 2}));
  EXPECT_FALSE(exact.ambiguous);
  EXPECT_THROW(infer_labels(g, "missing.weight"), Error);
}

TEST(MatchReconstructions, IsABijectionAndUndoesPermutations) {
  Gen gen(7);
  for (int trial = 0; trial < 50; ++trial) {
    const auto B = gen.integer(1, 6);
    const Tensor orig = gen.tensor({B, 1, 2, 2});
    std::vector<std::size_t> perm(static_cast<std::size_t>(B));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), gen.rng());
    Tensor rec = gather_rows(orig, perm);
    for (auto& v : rec.values()) v += gen.uniform(-1e-3, 1e-3);
    const auto m = match_reconstructions(rec, orig);
    EXPECT_EQ(m, perm);
    std::vector<std::size_t> sorted = m;
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::size_t> ident(static_cast<std::size_t>(B));
    std::iota(ident.begin(), ident.end(), 0);
    EXPECT_EQ(sorted, ident);
  }
}

}  // namespace
}  // namespace fedshield::attack
