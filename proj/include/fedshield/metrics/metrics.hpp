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
#include <vector>

#include "fedshield/attack/inversion.hpp"
#include "fedshield/data/dataset.hpp"
#include "fedshield/model/defender.hpp"

namespace fedshield::metrics {

// PSNR reported for an exact match.
inline constexpr double kPsnrCapDb = 100.0;

double mse(const Tensor& x, const Tensor& y);
double psnr_from_mse(double mse, double max_val);
double psnr(const Tensor& x, const Tensor& y, double max_val);

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels);
// Macro F1 over the classes that occur in labels or predictions.
double f1_macro(const std::vector<int>& predictions, const std::vector<int>& labels);

struct UtilityReport {
  double accuracy = 0.0;
  double f1 = 0.0;
  std::vector<int> predictions;
};

UtilityReport evaluate_utility(const model::DefenderModel& model, const ModelParameters& params,
                               const data::DatasetSplit& split, bool with_noise,
                               std::uint64_t seed);

// Accuracy of `clean_params` on reconstructions ordered like `true_labels`.
double probe_reconstructions(const Tensor& reconstructions, const model::DefenderModel& model,
                             const ModelParameters& clean_params,
                             const std::vector<int>& true_labels);

struct ReconReport {
  std::vector<double> mse;   // per original image, normalized units
  std::vector<double> psnr;  // dB against max_val
  double max_val = 0.0;      // max - min of the original batch
  double batch_mean_mse = 0.0;
  double batch_mean_psnr_db = 0.0;
  double batch_mean_mse_px = 0.0;  // [0, 1] pixel units
  double recon_classification_accuracy = 0.0;
  Tensor ordered;  // reconstructions reordered to the originals
};

// Matches `result` to `originals`, fills its per-image fields, and returns
// the batch report (probe accuracy left at 0).
ReconReport evaluate_reconstruction(attack::ReconstructionResult& result, const Tensor& originals,
                                    const data::NormStats& stats);

}  // namespace fedshield::metrics
