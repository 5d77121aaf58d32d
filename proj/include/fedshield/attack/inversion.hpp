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
#include <string>
#include <vector>

#include "fedshield/fl/federation.hpp"
#include "fedshield/named_tensors.hpp"
#include "fedshield/nn/sequential.hpp"

namespace fedshield::attack {

enum class InitMode { kGaussian, kUniform };
enum class LabelMode { kKnown, kInferred };

InitMode parse_init(const std::string& name);
LabelMode parse_label_mode(const std::string& name);

struct AttackConfig {
  int iterations = 4000;
  double lr = 0.1;
  double tv_weight = 1e-4;
  int restarts = 1;
  InitMode init = InitMode::kGaussian;
  LabelMode label_mode = LabelMode::kKnown;
  std::int64_t batch_size = 8;
  // Step on sign(gradient) and decay lr by 10x at 3/8, 5/8 and 7/8 of the budget.
  bool signed_gradient = true;
  bool lr_decay = true;
  int threads = 1;

  void validate() const;
};

struct PseudoGradient {
  NamedTensors gradient;
  bool degenerate = false;  // every delta was zero
};

// g = -delta / client_lr.
PseudoGradient pseudo_gradient(const fl::WeightUpdate& update);

// Attacker-side model: a feed-forward network plus the shared parameters it
// held when the victim round began.
struct VictimModel {
  nn::Sequential network;
  NamedTensors params;
  // Valid input range per channel in normalized units.
  std::vector<double> lower;
  std::vector<double> upper;
};

struct LabelInference {
  std::vector<int> labels;  // ascending
  bool ambiguous = false;
};

// Labels whose rows of the final weight gradient sum to a negative value.
// `batch_size` > 0 trims or pads (by repeating the most negative rows) to
// that size and flags the result as ambiguous when it had to.
LabelInference infer_labels(const NamedTensors& gradient, const std::string& final_weight,
                            std::int64_t batch_size = 0);

struct AttackObjective {
  double value = 0.0;
  double cosine = 0.0;
  double tv = 0.0;
  Tensor grad;  // d(value)/d(images)
};

// cosine distance between the model gradient at (images, labels) and
// `target`, plus tv_weight * TV(images).
AttackObjective attack_objective(const VictimModel& victim, const Tensor& images,
                                 const std::vector<int>& labels, const NamedTensors& target,
                                 double tv_weight, bool want_grad = true);

struct ReconstructionResult {
  Tensor images;                     // [B, C, H, W] normalized units
  std::vector<int> labels;           // labels used for matching gradients
  std::vector<std::size_t> matched;  // images[i] pairs with original matched[i]
  std::vector<double> mse;           // per matched image, normalized units
  std::vector<double> psnr;
  std::vector<double> loss_trace;       // objective per iteration, best restart
  std::vector<double> restart_objective;
  std::vector<bool> restart_aborted;
  int best_restart = 0;
  double objective = 0.0;
  bool labels_ambiguous = false;
};

// Gradient inversion of `update` against `victim`. `labels` is used for
// LabelMode::kKnown; inferred mode reads the final linear layer gradient.
ReconstructionResult invert(const fl::WeightUpdate& update, const VictimModel& victim,
                            const Shape& image_shape, const std::vector<int>& labels,
                            const AttackConfig& config, std::uint64_t seed);

// Greedy minimal-MSE one-to-one assignment of reconstructions to originals.
std::vector<std::size_t> match_reconstructions(const Tensor& reconstructions,
                                               const Tensor& originals);

}  // namespace fedshield::attack
