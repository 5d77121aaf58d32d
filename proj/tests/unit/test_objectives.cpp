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
#include <cmath>
#include <numeric>

#include "fedshield/errors.hpp"
#include "fedshield/objectives/losses.hpp"
#include "testing.hpp"

namespace fedshield::objectives {
namespace {

using testing::Gen;
using testing::max_fd_error;
using testing::rel_error;

TEST(Pearson, HandFixture) {
  const std::vector<double> x{1, 2, 3}, y{1, 3, 2};
  const auto r = pearson_r(x, y);
  EXPECT_NEAR(r.r, 0.5, 1e-15);
  EXPECT_FALSE(r.degenerate);
}

TEST(Pearson, IdentityAndNegation) {
  Gen gen(1);
  const auto x = gen.vector(10);
  std::vector<double> neg(x.size());
  std::transform(x.begin(), x.end(), neg.begin(), [](double v) { return -v; });
  EXPECT_NEAR(pearson_r(x, x).r, 1.0, 1e-12);
  EXPECT_NEAR(pearson_r(x, neg).r, -1.0, 1e-12);
}

TEST(Pearson, ConstantInputsAreDegenerate) {
  const std::vector<double> c{2, 2, 2, 2};
  const auto r = pearson_r(c, c);
  EXPECT_EQ(r.r, 0.0);
  EXPECT_TRUE(r.degenerate);
}

TEST(Pearson, RejectsShortOrMismatchedInputs) {
  const std::vector<double> one{1}, two{1, 2}, three{1, 2, 3};
  EXPECT_THROW(pearson_r(one, one), Error);
  EXPECT_THROW(pearson_r(two, three), Error);
}

TEST(PearsonProperty, MatchesOracleSymmetricAndAffineInvariant) {
  Gen gen(2);
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = static_cast<std::size_t>(gen.integer(2, 40));
    const auto x = gen.vector(n, -5, 5), y = gen.vector(n, -5, 5);
    const double r = pearson_r(x, y).r;
    EXPECT_LT(rel_error(r, oracles::pearson(x, y)), 1e-9);
    EXPECT_NEAR(pearson_r(y, x).r, r, 1e-12);
    EXPECT_LE(std::abs(r), 1.0 + 1e-12);
    const double a = gen.uniform(0.1, 3.0) * (gen.integer(0, 1) ? 1.0 : -1.0);
    const double b = gen.uniform(-4, 4);
    std::vector<double> ax(n);
    std::transform(x.begin(), x.end(), ax.begin(), [&](double v) { return a * v + b; });
    EXPECT_NEAR(pearson_r(ax, y).r, (a > 0 ? 1.0 : -1.0) * r, 1e-9);
  }
}

TEST(DecoderLoss, Examples) {
  Tensor x({1, 1, 1, 3}, std::vector<double>{1, 2, 3});
  EXPECT_NEAR(decoder_loss(x, x).loss.value, 0.0, 1e-12);
  EXPECT_NEAR(decoder_loss(x, x * -1.0).loss.value, 0.0, 1e-12);
  Tensor rec({1, 1, 1, 3}, std::vector<double>{1, 3, 2});
  EXPECT_NEAR(decoder_loss(x, rec).loss.value, 0.5, 1e-12);
}

TEST(DecoderLoss, RangeAndGradient) {
  Gen gen(3);
  for (auto reduction : {CorrelationReduction::kPerSample, CorrelationReduction::kFlattened}) {
    for (int trial = 0; trial < 10; ++trial) {
      const Tensor x = gen.tensor({3, 2, 3, 3});
      const Tensor rec = gen.tensor({3, 2, 3, 3});
      const auto out = decoder_loss(x, rec, reduction);
      EXPECT_GE(out.loss.value, 0.0);
      EXPECT_LE(out.loss.value, 1.0);
      auto f = [&](const Tensor& r) { return decoder_loss(x, r, reduction).loss.value; };
      EXPECT_LT(max_fd_error(f, rec, out.grad, gen), 1e-4);
    }
  }
}

TEST(DecoderLoss, ShapeMismatchThrows) {
  EXPECT_THROW(decoder_loss(Tensor({1, 1, 2, 2}), Tensor({1, 1, 2, 3})), ShapeError);
}

TEST(CrossEntropy, Examples) {
  const std::vector<int> y0{0};
  Tensor logits({1, 2}, std::vector<double>{2, 0});
  EXPECT_NEAR(cross_entropy(y0, logits).loss.value, 0.126928, 1e-6);
  EXPECT_NEAR(cross_entropy(y0, logits).loss.value, std::log1p(std::exp(-2.0)), 1e-14);
  Tensor uniform({1, 10}, 0.3);
  EXPECT_NEAR(cross_entropy(y0, uniform).loss.value, std::log(10.0), 1e-12);
  Tensor margin({1, 3}, std::vector<double>{60, 0, 0});
  EXPECT_LT(cross_entropy(y0, margin).loss.value, 1e-20);
}

TEST(CrossEntropy, Errors) {
  const std::vector<int> bad{3};
  EXPECT_THROW(cross_entropy(bad, Tensor({1, 3})), Error);
  const std::vector<int> y{0};
  Tensor inf({1, 2}, std::vector<double>{INFINITY, 0});
  EXPECT_THROW(cross_entropy(y, inf), Error);
}

TEST(CrossEntropy, Gradient) {
  Gen gen(4);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor logits = gen.tensor({4, 5}, -3, 3);
    const auto y = gen.labels(4, 5);
    const auto out = cross_entropy(y, logits);
    auto f = [&](const Tensor& l) { return cross_entropy(y, l).loss.value; };
    EXPECT_LT(max_fd_error(f, logits, out.grad, gen), 1e-4);
  }
}

TEST(PredictorLoss, CompositionExamples) {
  const std::vector<int> y{0};
  Tensor uniform({1, 10}, 0.0);
  Tensor x({1, 1, 2, 2}, std::vector<double>{1, 0, 0, 1});
  Tensor orth({1, 1, 2, 2}, std::vector<double>{1, 1, 0, 0});
  const auto a = predictor_loss(y, uniform, x, orth, 1.0);
  EXPECT_NEAR(a.loss.components.at("ce"), std::log(10.0), 1e-12);
  EXPECT_NEAR(a.loss.components.at("corr"), 0.0, 1e-12);

  Tensor sharp({1, 3}, std::vector<double>{60, 0, 0});
  const auto b = predictor_loss(y, sharp, x, x, 1.0);
  EXPECT_NEAR(b.loss.value, 1.0, 1e-12);

  // ce = 1 needs logits [t, 0] with log(1 + e^-t) = 1.
  const double t = -std::log(std::exp(1.0) - 1.0);
  Tensor logits({1, 2}, std::vector<double>{t, 0});
  Tensor x3({1, 1, 1, 3}, std::vector<double>{1, 2, 3});
  Tensor r3({1, 1, 1, 3}, std::vector<double>{1, 3, 2});
  const auto c = predictor_loss(y, logits, x3, r3, 1.0);
  EXPECT_NEAR(c.loss.value, 1.5, 1e-12);
}

TEST(PredictorLoss, ValueIsWeightedSumAndGradients) {
  Gen gen(5);
  for (int trial = 0; trial < 20; ++trial) {
    const double alpha = gen.uniform(0, 3);
    const Tensor logits = gen.tensor({3, 4});
    const auto y = gen.labels(3, 4);
    const Tensor x = gen.tensor({3, 1, 3, 3}), rec = gen.tensor({3, 1, 3, 3});
    const auto out = predictor_loss(y, logits, x, rec, alpha);
    EXPECT_EQ(out.loss.value, out.loss.components.at("ce") + alpha * out.loss.components.at("corr"));
    if (trial < 5) {
      auto fl = [&](const Tensor& l) { return predictor_loss(y, l, x, rec, alpha).loss.value; };
      auto fr = [&](const Tensor& r) { return predictor_loss(y, logits, x, r, alpha).loss.value; };
      EXPECT_LT(max_fd_error(fl, logits, out.grad_logits, gen), 1e-4);
      EXPECT_LT(max_fd_error(fr, rec, out.grad_reconstruction, gen), 1e-4);
    }
  }
  EXPECT_THROW(predictor_loss(std::vector<int>{0}, Tensor({1, 2}), Tensor({1, 1, 2, 2}),
                              Tensor({1, 1, 2, 2}), -1.0),
               Error);
}

TEST(TotalVariation, Examples) {
  Tensor img({1, 1, 2, 2}, std::vector<double>{0, 1, 0, 1});
  EXPECT_DOUBLE_EQ(total_variation(img).loss.value, 1.0);
  EXPECT_DOUBLE_EQ(total_variation(Tensor({2, 3, 4, 4}, 0.7)).loss.value, 0.0);
}

TEST(TotalVariationProperty, OracleShiftInvarianceAndGradient) {
  Gen gen(6);
  for (int trial = 0; trial < 100; ++trial) {
    const Shape s{gen.integer(1, 3), gen.integer(1, 3), gen.integer(2, 6), gen.integer(2, 6)};
    const Tensor img = gen.tensor(s);
    const double tv = total_variation(img).loss.value;
    EXPECT_LT(rel_error(tv, oracles::total_variation(img)), 1e-9);
    Tensor shifted = img;
    for (auto& v : shifted.values()) v += 2.5;
    EXPECT_NEAR(total_variation(shifted).loss.value, tv, 1e-12);
  }
  const Tensor img = gen.tensor({2, 2, 4, 4});
  auto f = [](const Tensor& t) { return total_variation(t).loss.value; };
  EXPECT_LT(max_fd_error(f, img, total_variation(img).grad, gen), 1e-4);
}

NamedTensors random_named(Gen& gen) {
  NamedTensors n;
  n.set("a.weight", gen.tensor({3, 2}));
  n.set("b.bias", gen.tensor({4}));
  return n;
}

TEST(CosineDistance, Examples) {
  Gen gen(7);
  const auto g = random_named(gen);
  NamedTensors neg = g;
  for (auto& [name, t] : neg) t *= -1.0;
  EXPECT_NEAR(cosine_grad_distance(g, g).value, 0.0, 1e-12);
  EXPECT_NEAR(cosine_grad_distance(g, neg).value, 2.0, 1e-12);
  NamedTensors e1, e2;
  e1.set("w", Tensor({2}, std::vector<double>{1, 0}));
  e2.set("w", Tensor({2}, std::vector<double>{0, 3}));
  EXPECT_NEAR(cosine_grad_distance(e1, e2).value, 1.0, 1e-15);
  NamedTensors zero;
  zero.set("w", Tensor({2}));
  const auto d = cosine_grad_distance(e1, zero);
  EXPECT_EQ(d.value, 1.0);
  EXPECT_TRUE(d.degenerate);
}

TEST(CosineDistance, MismatchedNamesThrow) {
  NamedTensors a, b;
  a.set("w", Tensor({2}, 1.0));
  b.set("v", Tensor({2}, 1.0));
  EXPECT_THROW(cosine_grad_distance(a, b), Error);
}

TEST(CosineDistanceProperty, OracleRangeAndGradient) {
  Gen gen(8);
  for (int trial = 0; trial < 100; ++trial) {
    const auto a = random_named(gen), b = random_named(gen);
    const double d = cosine_grad_distance(a, b).value;
    EXPECT_LT(rel_error(d, oracles::cosine_distance(a, b)), 1e-9);
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 2.0);
  }
  const auto a = random_named(gen), b = random_named(gen);
  const auto out = cosine_grad_distance(a, b, true);
  for (const auto& [name, t] : a) {
    auto f = [&, n = name](const Tensor& v) {
      NamedTensors p = a;
      p.at(n) = v;
      return cosine_grad_distance(p, b).value;
    };
    EXPECT_LT(max_fd_error(f, t, out.grad_first.at(name), gen), 1e-4) << name;
  }
}

TEST(Hsic, SixPointFixtureMatchesOracle) {
  Tensor a({6, 2}, std::vector<double>{0, 0, 1, 0, 0, 1, 1, 1, 2, 0.5, -1, 0.3});
  Tensor b({6, 1}, std::vector<double>{0.1, 0.9, 0.4, 1.2, 2.0, -0.7});
  const auto out = hsic(a, b);
  EXPECT_NEAR(out.bandwidth_a, oracles::median_distance(a), 1e-15);
  EXPECT_NEAR(out.bandwidth_b, oracles::median_distance(b), 1e-15);
  EXPECT_NEAR(out.value, oracles::hsic(a, b, out.bandwidth_a, out.bandwidth_b), 1e-10);
  EXPECT_GT(out.value, 0.0);
}

TEST(Hsic, ConstantSideGivesZero) {
  Gen gen(9);
  const Tensor a = gen.tensor({7, 3});
  EXPECT_NEAR(hsic(a, Tensor({7, 1}, 4.0)).value, 0.0, 1e-9);
  EXPECT_GT(hsic(a, a).value, 0.0);
}

TEST(Hsic, Errors) {
  Gen gen(10);
  EXPECT_THROW(hsic(gen.tensor({3, 2}), gen.tensor({3, 2})), Error);
  EXPECT_THROW(hsic(gen.tensor({5, 2}), gen.tensor({4, 2})), ShapeError);
  HsicOptions zero;
  zero.bandwidth_a = 0.0;
  EXPECT_THROW(hsic(gen.tensor({5, 2}), gen.tensor({5, 2}), zero), Error);
}

TEST(HsicProperty, OracleNonNegativityAndGradient) {
  Gen gen(11);
  for (int trial = 0; trial < 100; ++trial) {
    const auto B = gen.integer(4, 9);
    const Tensor a = gen.tensor({B, gen.integer(1, 5)}), b = gen.tensor({B, gen.integer(1, 4)});
    const auto out = hsic(a, b);
    EXPECT_LT(rel_error(out.value, oracles::hsic(a, b, out.bandwidth_a, out.bandwidth_b)), 1e-9);
    EXPECT_GE(out.value, -1e-9);
  }
  for (bool fixed : {false, true}) {
    for (int trial = 0; trial < 5; ++trial) {
      const Tensor a = gen.tensor({6, 4}), b = gen.tensor({6, 3});
      HsicOptions options;
      options.want_grad = true;
      if (fixed) options.bandwidth_a = 1.3;
      const auto out = hsic(a, b, options);
      options.want_grad = false;
      auto f = [&](const Tensor& t) { return hsic(t, b, options).value; };
      EXPECT_LT(max_fd_error(f, a, out.grad_a, gen, 24, 1e-6), 1e-4);
    }
  }
}

TEST(MedianBandwidth, CoincidentRowsFallBack) {
  EXPECT_EQ(median_bandwidth(Tensor({4, 3}, 1.0)), 1.0);
  Tensor two({2, 1}, std::vector<double>{0, 3});
  EXPECT_DOUBLE_EQ(median_bandwidth(two), 3.0);
}

}  // namespace
}  // namespace fedshield::objectives
