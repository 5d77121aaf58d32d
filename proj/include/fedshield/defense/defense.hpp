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
#include <string>
#include <vector>

#include "fedshield/data/dataset.hpp"
#include "fedshield/model/defender.hpp"
#include "fedshield/objectives/losses.hpp"
#include "fedshield/optim/optimizer.hpp"

namespace fedshield::defense {

enum class DefenseKind { kNone, kProposedFixed, kProposedLearnable, kDpSgd, kBido };

const char* defense_name(DefenseKind kind);
DefenseKind parse_defense(const std::string& name);
bool uses_noise(DefenseKind kind);

struct DpConfig {
  double sigma = 0.0;
  std::optional<double> clip_norm;
};

struct BidoConfig {
  double lambda_x = 0.0;
  double lambda_y = 0.0;
};

struct PretrainConfig {
  int epochs = 0;
  double lr = 1e-3;
  std::int64_t batch_size = 128;
};

struct DefenseConfig {
  DefenseKind kind = DefenseKind::kNone;
  double alpha = 1.0;
  // Fixed: the mu/sigma used in FL. Learnable: the pretraining initialization.
  double noise_mu = 1.0;
  double noise_sigma = 0.1;
  DpConfig dp;
  BidoConfig bido;
  PretrainConfig pretrain;
  // Restrict the first (decoder-loss) update to decoder parameters.
  bool decoder_only_first_step = false;
  objectives::CorrelationReduction reduction = objectives::CorrelationReduction::kPerSample;

  // Throws ConfigError for fields consulted by `kind` that are out of range.
  void validate() const;
  // Learning-rate optimizer used by client training for this kind.
  optim::OptimizerKind optimizer() const;
  // Noise spec for FL training; `learned` replaces it for proposed_learnable.
  model::NoiseSpec noise_spec(std::int64_t latent_size) const;
};

struct StepResult {
  objectives::LossValue loss;                   // last update of the step
  std::optional<objectives::LossValue> decoder;  // first update of a proposed step
};

// Which parameters an update may touch.
struct TrainableSet {
  bool encoder = true;
  bool predictor = true;
  bool decoder = true;
  bool noise = false;

  bool accepts(ParamGroup group) const;
  optim::Optimizer::Filter filter(const ModelParameters& params) const;
};

// Proposed defense: an update on the decoder loss followed by an update on
// the predictor loss, each with a fresh noise draw.
StepResult proposed_step(const model::DefenderModel& model, ModelParameters& params,
                         const data::Batch& batch, const DefenseConfig& config,
                         optim::Optimizer& optimizer, Rng& noise_rng,
                         const TrainableSet& trainable = {});

// Cross-entropy gradient, optional clipping to clip_norm, plus N(0, sigma^2)
// per coordinate, applied with plain SGD at `lr`.
StepResult dp_sgd_step(const model::DefenderModel& model, ModelParameters& params,
                       const data::Batch& batch, const DpConfig& config, double lr, Rng& rng);

// Cross entropy + lambda_x HSIC(latent, input) - lambda_y HSIC(latent, onehot).
StepResult bido_step(const model::DefenderModel& model, ModelParameters& params,
                     const data::Batch& batch, const BidoConfig& config,
                     optim::Optimizer& optimizer);

// Undefended cross-entropy update.
StepResult plain_step(const model::DefenderModel& model, ModelParameters& params,
                      const data::Batch& batch, optim::Optimizer& optimizer);

// Owns the per-client optimizer and random stream for one defense kind.
class DefenseStrategy {
 public:
  DefenseStrategy(DefenseConfig config, double lr, std::uint64_t seed);

  const DefenseConfig& config() const { return config_; }
  optim::Optimizer& optimizer() { return optimizer_; }
  Rng& rng() { return rng_; }
  // Smallest batch the step accepts; smaller trailing batches are skipped.
  std::int64_t min_batch() const;

  // `optimizer` replaces the owned optimizer for this step when non-null.
  StepResult step(const model::DefenderModel& model, ModelParameters& params,
                  const data::Batch& batch, optim::Optimizer* optimizer = nullptr);

 private:
  DefenseConfig config_;
  optim::Optimizer optimizer_;
  Rng rng_;
};

struct PretrainEpoch {
  int epoch = 0;
  double decoder_loss = 0.0;
  double predictor_loss = 0.0;
  double mean_abs_r = 0.0;
};

struct PretrainResult {
  model::NoiseSpec noise;
  std::vector<PretrainEpoch> log;
};

// Learns per-element noise parameters on `split`; model weights are discarded.
PretrainResult pretrain_noise(const model::DefenderModel& model, const data::DatasetSplit& split,
                              const DefenseConfig& config, std::uint64_t seed);

void write_pretrain_log(const std::filesystem::path& path, const std::vector<PretrainEpoch>& log);

// Noise file: archive holding noise.mu / noise.rho plus the spec metadata.
void save_noise(const std::filesystem::path& path, const model::NoiseSpec& spec);
model::NoiseSpec load_noise(const std::filesystem::path& path);

}  // namespace fedshield::defense
