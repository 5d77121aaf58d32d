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

#include <set>

#include "fedshield/errors.hpp"
#include "fedshield/model/defender.hpp"
#include "testing.hpp"

namespace fedshield::model {
namespace {

using testing::Gen;
using testing::max_abs_diff;
using testing::max_fd_error;
using testing::TempDir;
using testing::tiny_arch;

ArchitectureConfig arch_of(std::int64_t side, std::int64_t divisor) {
  ArchitectureConfig a;
  a.height = a.width = side;
  a.width_divisor = divisor;
  return a;
}

TEST(Defender, ReferenceShapesFor32) {
  const DefenderModel m(arch_of(32, 1));
  EXPECT_EQ(m.latent_shape(), (Shape{256, 10, 10}));
  EXPECT_EQ(m.predictor_features(), 2304);
  EXPECT_EQ(m.arch().resolved_final_kernel(), 2);
}

TEST(Defender, ReferenceShapesFor28) {
  ArchitectureConfig a = arch_of(28, 1);
  a.num_classes = 8;
  const DefenderModel m(a);
  EXPECT_EQ(m.latent_shape(), (Shape{256, 9, 9}));
  EXPECT_EQ(m.predictor_features(), 2304);
  EXPECT_EQ(m.arch().resolved_final_kernel(), 4);
}

TEST(Defender, LayerCounts) {
  const DefenderModel m(arch_of(32, 1));
  const auto params = m.init_parameters(0, NoiseSpec::fixed(0.0, 0.1));
  EXPECT_EQ(params.names_in(ParamGroup::kEncoder).size(), 18u);  // 9 convs
  EXPECT_EQ(params.names_in(ParamGroup::kPredictor).size(), 2u);
  EXPECT_EQ(params.at("pred.fc.weight").shape(), (Shape{10, 2304}));
}

TEST(Defender, ShapeClosureForBothSizes) {
  Gen gen(1);
  for (std::int64_t side : {32, 28, 16, 9}) {
    const DefenderModel m(arch_of(side, 32));
    const auto params = m.init_parameters(1, NoiseSpec::fixed(0.0, 0.1));
    const Tensor x = gen.tensor({2, 3, side, side});
    const auto out = m.forward(x, params, nullptr, nullptr);
    EXPECT_EQ(out.reconstruction.shape(), x.shape()) << side;
    EXPECT_EQ(out.logits.shape(), (Shape{2, 10}));
  }
}

TEST(Defender, TooSmallInputFailsConstruction) {
  EXPECT_THROW(DefenderModel(arch_of(8, 32)), ConstructionError);
}

TEST(Defender, InputShapeMismatchThrows) {
  const DefenderModel m(tiny_arch());
  const auto params = m.init_parameters(0, NoiseSpec::fixed(0.0, 0.1));
  EXPECT_THROW(m.forward(Tensor({1, 3, 9, 9}), params, nullptr, nullptr), ShapeError);
}

TEST(Defender, DeterministicInitAndForward) {
  const DefenderModel m(tiny_arch());
  const auto a = m.init_parameters(4, NoiseSpec::fixed(0.0, 0.1));
  const auto b = m.init_parameters(4, NoiseSpec::fixed(0.0, 0.1));
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == m.init_parameters(5, NoiseSpec::fixed(0.0, 0.1)));
  Gen gen(2);
  const Tensor x = gen.tensor({3, 2, 9, 9});
  const auto r1 = m.forward(x, a, nullptr, nullptr), r2 = m.forward(x, a, nullptr, nullptr);
  EXPECT_TRUE(r1.logits == r2.logits);
  EXPECT_TRUE(r1.reconstruction == r2.reconstruction);
  EXPECT_TRUE(r1.noisy_latent == r1.latent);
  Rng ra = make_rng(9), rb = make_rng(9);
  const Tensor ea = m.sample_epsilon(3, ra), eb = m.sample_epsilon(3, rb);
  EXPECT_TRUE(m.forward(x, a, &ea, nullptr).logits == m.forward(x, a, &eb, nullptr).logits);
}

TEST(Defender, NoiseMeanMatchesMuMonteCarlo) {
  const DefenderModel m(tiny_arch());
  const double mu = 0.7, sigma = 0.4;
  const auto params = m.init_parameters(0, NoiseSpec::fixed(mu, sigma));
  Gen gen(3);
  const std::int64_t draws = 10000;
  const Tensor one = gen.tensor({1, 2, 9, 9});
  Tensor x({draws, 2, 9, 9});
  for (std::int64_t i = 0; i < draws; ++i)
    std::copy(one.data(), one.data() + one.size(), x.data() + i * one.size());
  Rng rng = make_rng(11);
  const Tensor eps = m.sample_epsilon(draws, rng);
  const auto out = m.forward(x, params, &eps, nullptr, false);
  const auto L = static_cast<std::size_t>(m.latent_size());
  const double tol = 3.0 * sigma / std::sqrt(static_cast<double>(draws));
  for (std::size_t j : {std::size_t{0}, L / 2, L - 1}) {
    double mean = 0.0;
    for (std::int64_t i = 0; i < draws; ++i) {
      const std::size_t k = static_cast<std::size_t>(i) * L + j;
      mean += out.noisy_latent[k] - out.latent[k];
    }
    mean /= static_cast<double>(draws);
    EXPECT_NEAR(mean, mu, tol) << j;
  }
}

TEST(Defender, ReparameterizationDerivatives) {
  const DefenderModel m(tiny_arch());
  const auto L = m.latent_size();
  const auto params = m.init_parameters(0, NoiseSpec::learnable(0.2, 0.3, L));
  Gen gen(4);
  const Tensor x = gen.tensor({2, 2, 9, 9});
  Rng rng = make_rng(12);
  const Tensor eps = m.sample_epsilon(2, rng);
  const double h = 1e-6;
  const std::size_t j = 5;
  auto noisy = [&](const ModelParameters& p) { return m.forward(x, p, &eps, nullptr, false).noisy_latent; };
  ModelParameters plus = params, minus = params;
  plus.at(kNoiseMu)[j] += h;
  minus.at(kNoiseMu)[j] -= h;
  Tensor d = (noisy(plus) - noisy(minus)) * (1.0 / (2 * h));
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double expected = i % static_cast<std::size_t>(L) == j ? 1.0 : 0.0;
    EXPECT_NEAR(d[i], expected, 1e-6);
  }
  // d/dsigma = eps, with sigma = softplus(rho) so d/drho = eps * sigmoid(rho).
  plus = params;
  minus = params;
  const double rho = params.at(kNoiseRho)[j];
  plus.at(kNoiseRho)[j] = inverse_softplus(softplus(rho) + h);
  minus.at(kNoiseRho)[j] = inverse_softplus(softplus(rho) - h);
  d = (noisy(plus) - noisy(minus)) * (1.0 / (2 * h));
  for (std::int64_t b = 0; b < 2; ++b) {
    const std::size_t k = static_cast<std::size_t>(b * L) + j;
    EXPECT_LT(testing::rel_error(d[k], eps[k]), 1e-4);
  }
  EXPECT_NEAR(softplus(inverse_softplus(0.3)), 0.3, 1e-14);
}

TEST(Defender, BackwardMatchesFiniteDifferences) {
  const DefenderModel m(tiny_arch());
  const auto params = m.init_parameters(2, NoiseSpec::learnable(0.1, 0.2, m.latent_size()));
  Gen gen(5);
  const Tensor x = gen.tensor({3, 2, 9, 9});
  Rng rng = make_rng(13);
  const Tensor eps = m.sample_epsilon(3, rng);
  const Tensor pr = gen.tensor({3, 2, 9, 9}), pl = gen.tensor({3, 3});
  auto objective = [&](const ModelParameters& p) {
    const auto r = m.forward(x, p, &eps, nullptr);
    return dot(r.reconstruction, pr) + dot(r.logits, pl);
  };
  ForwardTrace trace;
  m.forward(x, params, &eps, &trace);
  NamedTensors grads;
  BackwardRequest req;
  req.grad_reconstruction = &pr;
  req.grad_logits = &pl;
  m.backward(trace, params, req, grads);
  EXPECT_EQ(grads.size(), params.size());
  for (const auto& name : {"enc.conv1.weight", "enc.conv9.bias", "pred.fc.weight", "dec.deconv1.weight",
                           "dec.bn2.weight", "dec.deconv3.bias", kNoiseMu, kNoiseRho}) {
    ASSERT_TRUE(params.contains(name)) << name;
    auto f = [&, n = std::string(name)](const Tensor& v) {
      ModelParameters p = params;
      p.at(n) = v;
      return objective(p);
    };
    EXPECT_LT(max_fd_error(f, params.at(name), grads.at(name), gen, 16, 1e-6), 1e-4) << name;
  }
}

TEST(Defender, StopAtLatentSkipsEncoder) {
  const DefenderModel m(tiny_arch());
  const auto params = m.init_parameters(2, NoiseSpec::fixed(0.0, 0.1));
  Gen gen(6);
  const Tensor x = gen.tensor({2, 2, 9, 9});
  ForwardTrace trace;
  m.forward(x, params, nullptr, &trace);
  const Tensor pr = gen.tensor({2, 2, 9, 9});
  NamedTensors grads;
  BackwardRequest req;
  req.grad_reconstruction = &pr;
  req.stop_at_latent = true;
  m.backward(trace, params, req, grads);
  for (const auto& name : grads.names()) EXPECT_EQ(params.group_of(name), ParamGroup::kDecoder) << name;
  EXPECT_FALSE(grads.empty());
}

TEST(Parameters, PartitionIsTotalAndSharedExcludesPrivateGroups) {
  const DefenderModel m(tiny_arch());
  const auto params = m.init_parameters(0, NoiseSpec::fixed(0.0, 0.1));
  std::size_t total = 0;
  std::set<std::string> seen;
  for (auto g : {ParamGroup::kEncoder, ParamGroup::kPredictor, ParamGroup::kDecoder, ParamGroup::kNoise}) {
    for (const auto& n : params.names_in(g)) {
      EXPECT_TRUE(seen.insert(n).second) << n;
      ++total;
    }
  }
  EXPECT_EQ(total, params.size());
  const auto shared = shared_parameters(params);
  EXPECT_EQ(shared.size(), params.names_in(ParamGroup::kEncoder).size() +
                               params.names_in(ParamGroup::kPredictor).size());
  for (const auto& n : shared.tensors().names()) {
    EXPECT_NE(n.rfind("dec.", 0), 0u) << n;
    EXPECT_NE(n.rfind("noise.", 0), 0u) << n;
  }
  EXPECT_TRUE(merge_parameters(shared, params) == params);
  ModelParameters other = m.init_parameters(7, NoiseSpec::fixed(0.0, 0.1));
  const auto merged = merge_parameters(shared, other);
  EXPECT_TRUE(merged.at("enc.conv1.weight") == params.at("enc.conv1.weight"));
  EXPECT_TRUE(merged.at("dec.deconv1.weight") == other.at("dec.deconv1.weight"));
}

TEST(Parameters, CheckpointRoundTrip) {
  TempDir dir;
  const ArchitectureConfig arch = tiny_arch(3, 4);
  const DefenderModel m(arch);
  const auto params = m.init_parameters(0, NoiseSpec::learnable(0.1, 0.2, m.latent_size()));
  save_checkpoint(dir / "m.fsh", params, arch);
  ArchitectureConfig back;
  const auto loaded = load_checkpoint(dir / "m.fsh", &back);
  EXPECT_TRUE(loaded == params);
  EXPECT_EQ(arch_to_json(back), arch_to_json(arch));
  EXPECT_EQ(loaded.group_of(kNoiseRho), ParamGroup::kNoise);
}

TEST(NoiseSpec, Validation) {
  EXPECT_THROW(NoiseSpec::fixed(0.0, 0.0).validate(4), Error);
  EXPECT_THROW(NoiseSpec::fixed(NAN, 1.0).validate(4), Error);
  NoiseSpec wrong = NoiseSpec::fixed(0.0, 1.0);
  wrong.mu = {1, 2, 3};
  EXPECT_THROW(wrong.validate(4), Error);
  EXPECT_NO_THROW(NoiseSpec::learnable(0.0, 1.0, 4).validate(4));
  NoiseSpec scalar_learnable = NoiseSpec::fixed(0.0, 1.0);
  scalar_learnable.mode = NoiseMode::kLearnable;
  EXPECT_THROW(scalar_learnable.validate(4), Error);
  EXPECT_EQ(parse_noise_mode(noise_mode_name(NoiseMode::kLearnable)), NoiseMode::kLearnable);
}

}  // namespace
}  // namespace fedshield::model
