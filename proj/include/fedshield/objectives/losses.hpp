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

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedshield/named_tensors.hpp"
#include "fedshield/tensor.hpp"

namespace fedshield::objectives {

// Denominator guard for correlation of (near-)constant signals.
inline constexpr double kCorrelationEpsilon = 1e-12;

// A scalar loss together with the named sub-terms it was combined from.
struct LossValue {
  double value = 0.0;
  std::map<std::string, double> components;
};

struct PearsonResult {
  double r = 0.0;
  bool degenerate = false;  // denominator fell below kCorrelationEpsilon
};

// Pearson correlation of two equal-length signals (>= 2 elements).
PearsonResult pearson_r(std::span<const double> x, std::span<const double> y);

// How a batch of images is reduced to a correlation value.
enum class CorrelationReduction {
  kPerSample,  // r per image, absolute values averaged over the batch
  kFlattened,  // one r over the flattened batch
};

struct AbsCorrelation {
  double mean_abs_r = 0.0;
  std::vector<double> per_sample_r;
  bool degenerate = false;
  Tensor grad;  // d(mean_abs_r)/d(reconstruction)
};

AbsCorrelation abs_correlation(const Tensor& x, const Tensor& reconstruction,
                               CorrelationReduction reduction = CorrelationReduction::kPerSample,
                               bool want_grad = true);

struct LossAndGrad {
  LossValue loss;
  Tensor grad;
};

// 1 - |r(x, x_rec)|, averaged per image. Gradient is w.r.t. x_rec.
LossAndGrad decoder_loss(const Tensor& x, const Tensor& reconstruction,
                         CorrelationReduction reduction = CorrelationReduction::kPerSample);

// Mean over the batch of -log softmax(logits)[label]. Gradient w.r.t. logits.
LossAndGrad cross_entropy(std::span<const int> labels, const Tensor& logits);

struct PredictorLoss {
  LossValue loss;  // components: ce, corr; value = ce + alpha * corr
  Tensor grad_logits;
  Tensor grad_reconstruction;
};

PredictorLoss predictor_loss(std::span<const int> labels, const Tensor& logits, const Tensor& x,
                             const Tensor& reconstruction, double alpha,
                             CorrelationReduction reduction = CorrelationReduction::kPerSample);

// Anisotropic total variation: mean |vertical diff| + mean |horizontal diff|.
LossAndGrad total_variation(const Tensor& images);

struct CosineDistance {
  double value = 1.0;
  bool degenerate = false;
  NamedTensors grad_first;  // d(value)/d(first), filled when requested
};

// 1 - <a, b> / (|a| |b|) over the concatenation of all tensors.
CosineDistance cosine_grad_distance(const NamedTensors& first, const NamedTensors& second,
                                    bool want_grad = false);

struct HsicOptions {
  std::optional<double> bandwidth_a;
  std::optional<double> bandwidth_b;
  bool want_grad = false;
};

struct HsicResult {
  double value = 0.0;
  double bandwidth_a = 0.0;
  double bandwidth_b = 0.0;
  Tensor grad_a;  // d(value)/dA when requested
};

// Median pairwise Euclidean distance between rows; 1.0 when all rows coincide.
double median_bandwidth(const Tensor& rows);

// Biased HSIC tr(K H L H) / (B - 1)^2 with Gaussian kernels on rows of A and B.
HsicResult hsic(const Tensor& a, const Tensor& b, const HsicOptions& options = {});

// Rows of `t` viewed as [B, numel / B].
Tensor flatten_rows(const Tensor& t);

}  // namespace fedshield::objectives
