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

#include "fedshield/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "fedshield/errors.hpp"
#include "fedshield/fl/federation.hpp"

namespace fedshield::metrics {

double mse(const Tensor& x, const Tensor& y) {
  require_same_shape(x, y, "mse");
  if (x.size() == 0) throw ShapeError("mse: empty tensors");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  return s / static_cast<double>(x.size());
}

double psnr_from_mse(double mse_value, double max_val) {
  if (!(max_val > 0.0)) throw Error("psnr: max_val must be positive");
  if (mse_value <= 0.0) return kPsnrCapDb;
  return std::min(kPsnrCapDb, 10.0 * std::log10(max_val * max_val / mse_value));
}

double psnr(const Tensor& x, const Tensor& y, double max_val) {
  return psnr_from_mse(mse(x, y), max_val);
}

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (labels.empty()) throw Error("accuracy: empty label set");
  if (predictions.size() != labels.size()) throw ShapeError("accuracy: length mismatch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predictions[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

double f1_macro(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (labels.empty()) throw Error("f1_macro: empty label set");
  if (predictions.size() != labels.size()) throw ShapeError("f1_macro: length mismatch");
  std::set<int> classes(labels.begin(), labels.end());
  classes.insert(predictions.begin(), predictions.end());
  double total = 0.0;
  for (int c : classes) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const bool p = predictions[i] == c, t = labels[i] == c;
      tp += p && t;
      fp += p && !t;
      fn += !p && t;
    }
    const double denom = 2 * tp + fp + fn;
    total += denom > 0 ? 2 * tp / denom : 0.0;
  }
  return total / static_cast<double>(classes.size());
}

UtilityReport evaluate_utility(const model::DefenderModel& model, const ModelParameters& params,
                               const data::DatasetSplit& split, bool with_noise,
                               std::uint64_t seed) {
  if (split.size() == 0) throw Error("evaluate_utility: empty split");
  Rng rng = make_rng(seed, {kStreamEval});
  UtilityReport r;
  r.predictions = model.predict(split.images, params, with_noise ? &rng : nullptr);
  r.accuracy = accuracy(r.predictions, split.labels);
  r.f1 = f1_macro(r.predictions, split.labels);
  return r;
}

double probe_reconstructions(const Tensor& reconstructions, const model::DefenderModel& model,
                             const ModelParameters& clean_params,
                             const std::vector<int>& true_labels) {
  if (reconstructions.rank() != 4 ||
      reconstructions.dim(0) != static_cast<std::int64_t>(true_labels.size())) {
    throw ShapeError("probe_reconstructions: reconstructions and labels are not matched");
  }
  return accuracy(model.predict(reconstructions, clean_params, nullptr), true_labels);
}

ReconReport evaluate_reconstruction(attack::ReconstructionResult& result, const Tensor& originals,
                                    const data::NormStats& stats) {
  require_same_shape(result.images, originals, "evaluate_reconstruction");
  result.matched = attack::match_reconstructions(result.images, originals);
  const auto B = originals.dim(0);
  ReconReport report;
  const auto [lo, hi] = std::minmax_element(originals.values().begin(), originals.values().end());
  report.max_val = *hi - *lo;
  if (!(report.max_val > 0.0)) report.max_val = 1.0;

  report.ordered = Tensor(originals.shape());
  const auto D = originals.row_size();
  for (std::int64_t i = 0; i < B; ++i) {
    const auto j = static_cast<std::int64_t>(result.matched[static_cast<std::size_t>(i)]);
    std::copy_n(result.images.data() + i * D, D, report.ordered.data() + j * D);
  }
  const Tensor px_rec = data::denormalize(report.ordered, stats);
  const Tensor px_orig = data::denormalize(originals, stats);
  result.mse.assign(static_cast<std::size_t>(B), 0.0);
  result.psnr.assign(static_cast<std::size_t>(B), 0.0);
  for (std::int64_t j = 0; j < B; ++j) {
    const double m = mse(report.ordered.slice_rows(j, j + 1), originals.slice_rows(j, j + 1));
    report.mse.push_back(m);
    report.psnr.push_back(psnr_from_mse(m, report.max_val));
    report.batch_mean_mse_px += mse(px_rec.slice_rows(j, j + 1), px_orig.slice_rows(j, j + 1));
  }
  for (std::int64_t i = 0; i < B; ++i) {
    const auto j = result.matched[static_cast<std::size_t>(i)];
    result.mse[static_cast<std::size_t>(i)] = report.mse[j];
    result.psnr[static_cast<std::size_t>(i)] = report.psnr[j];
  }
  for (std::int64_t j = 0; j < B; ++j) {
    report.batch_mean_mse += report.mse[static_cast<std::size_t>(j)];
    report.batch_mean_psnr_db += report.psnr[static_cast<std::size_t>(j)];
  }
  report.batch_mean_mse /= static_cast<double>(B);
  report.batch_mean_psnr_db /= static_cast<double>(B);
  report.batch_mean_mse_px /= static_cast<double>(B);
  return report;
}

}  // namespace fedshield::metrics
