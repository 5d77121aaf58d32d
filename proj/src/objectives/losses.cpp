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

#include "fedshield/objectives/losses.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "fedshield/errors.hpp"

namespace fedshield::objectives {
namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

struct CenteredStats {
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  double mean_x = 0.0, mean_y = 0.0;
};

CenteredStats centered_stats(std::span<const double> x, std::span<const double> y) {
  CenteredStats s;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    s.mean_x += x[i];
    s.mean_y += y[i];
  }
  s.mean_x /= n;
  s.mean_y /= n;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double cx = x[i] - s.mean_x, cy = y[i] - s.mean_y;
    s.sxy += cx * cy;
    s.sxx += cx * cx;
    s.syy += cy * cy;
  }
  return s;
}

// r and dr/dy for one pair of signals; grad may be empty to skip.
PearsonResult pearson_with_grad(std::span<const double> x, std::span<const double> y,
                                std::span<double> grad_y, double grad_scale) {
  if (x.size() != y.size()) throw ShapeError("pearson_r: length mismatch");
  if (x.size() < 2) throw ShapeError("pearson_r: need at least two elements");
  const CenteredStats s = centered_stats(x, y);
  const double denom = std::sqrt(s.sxx * s.syy);
  PearsonResult out;
  out.degenerate = denom < kCorrelationEpsilon;
  const double d = std::max(denom, kCorrelationEpsilon);
  out.r = s.sxy / d;
  if (!grad_y.empty()) {
    // d r / d y_i = cx_i / d - r * cy_i / syy (centering terms vanish).
    const double r_over_syy = (out.degenerate || s.syy == 0.0) ? 0.0 : out.r / s.syy;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double cx = x[i] - s.mean_x, cy = y[i] - s.mean_y;
      grad_y[i] += grad_scale * (cx / d - r_over_syy * cy);
    }
  }
  return out;
}

}  // namespace

PearsonResult pearson_r(std::span<const double> x, std::span<const double> y) {
  return pearson_with_grad(x, y, {}, 0.0);
}

AbsCorrelation abs_correlation(const Tensor& x, const Tensor& reconstruction,
                               CorrelationReduction reduction, bool want_grad) {
  require_same_shape(x, reconstruction, "correlation");
  AbsCorrelation out;
  if (want_grad) out.grad = Tensor::zeros_like(reconstruction);
  if (reduction == CorrelationReduction::kFlattened || x.rank() == 0) {
    const auto pr = pearson_with_grad(x.values(), reconstruction.values(), {}, 0.0);
    out.per_sample_r = {pr.r};
    out.mean_abs_r = std::abs(pr.r);
    out.degenerate = pr.degenerate;
    if (want_grad) pearson_with_grad(x.values(), reconstruction.values(), out.grad.values(), sign(pr.r));
    return out;
  }
  const auto batch = x.dim(0);
  const auto stride = static_cast<std::size_t>(x.row_size());
  const double inv_batch = 1.0 / static_cast<double>(batch);
  for (std::int64_t b = 0; b < batch; ++b) {
    const auto xs = x.values().subspan(b * stride, stride);
    const auto ys = reconstruction.values().subspan(b * stride, stride);
    const auto pr = pearson_with_grad(xs, ys, {}, 0.0);
    out.per_sample_r.push_back(pr.r);
    out.mean_abs_r += std::abs(pr.r) * inv_batch;
    out.degenerate = out.degenerate || pr.degenerate;
    if (want_grad) {
      pearson_with_grad(xs, ys, out.grad.values().subspan(b * stride, stride),
                        sign(pr.r) * inv_batch);
    }
  }
  return out;
}

LossAndGrad decoder_loss(const Tensor& x, const Tensor& reconstruction,
                         CorrelationReduction reduction) {
  auto corr = abs_correlation(x, reconstruction, reduction, true);
  LossAndGrad out;
  out.loss.components["corr"] = corr.mean_abs_r;
  out.loss.value = 1.0 - corr.mean_abs_r;
  out.grad = std::move(corr.grad) * -1.0;
  return out;
}

LossAndGrad cross_entropy(std::span<const int> labels, const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be [B, K]");
  const auto B = logits.dim(0), K = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != B) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(B));
  }
  if (!all_finite(logits)) throw NumericError("cross_entropy: non-finite logits");
  LossAndGrad out;
  out.grad = Tensor::zeros_like(logits);
  double total = 0.0;
  const double inv_batch = 1.0 / static_cast<double>(B);
  for (std::int64_t b = 0; b < B; ++b) {
    const int y = labels[b];
    if (y < 0 || y >= K) {
      throw Error("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                  std::to_string(K) + ")");
    }
    const double* z = logits.data() + b * K;
    const double zmax = *std::max_element(z, z + K);
    double sum = 0.0;
    for (std::int64_t k = 0; k < K; ++k) sum += std::exp(z[k] - zmax);
    const double lse = zmax + std::log(sum);
    total += lse - z[y];
    double* g = out.grad.data() + b * K;
    for (std::int64_t k = 0; k < K; ++k) {
      g[k] = (std::exp(z[k] - lse) - (k == y ? 1.0 : 0.0)) * inv_batch;
    }
  }
  out.loss.value = total * inv_batch;
  out.loss.components["ce"] = out.loss.value;
  return out;
}

PredictorLoss predictor_loss(std::span<const int> labels, const Tensor& logits, const Tensor& x,
                             const Tensor& reconstruction, double alpha,
                             CorrelationReduction reduction) {
  if (alpha < 0.0) throw Error("predictor_loss: alpha must be non-negative");
  auto ce = cross_entropy(labels, logits);
  auto corr = abs_correlation(x, reconstruction, reduction, true);
  PredictorLoss out;
  out.loss.components["ce"] = ce.loss.value;
  out.loss.components["corr"] = corr.mean_abs_r;
  out.loss.value = ce.loss.value + alpha * corr.mean_abs_r;
  out.grad_logits = std::move(ce.grad);
  out.grad_reconstruction = std::move(corr.grad) * alpha;
  return out;
}

LossAndGrad total_variation(const Tensor& images) {
  if (images.rank() != 4) throw ShapeError("total_variation: expected [N, C, H, W]");
  const auto N = images.dim(0), C = images.dim(1), H = images.dim(2), W = images.dim(3);
  if (H < 2 || W < 2) throw ShapeError("total_variation: H and W must be at least 2");
  LossAndGrad out;
  out.grad = Tensor::zeros_like(images);
  const double inv_v = 1.0 / static_cast<double>(N * C * (H - 1) * W);
  const double inv_h = 1.0 / static_cast<double>(N * C * H * (W - 1));
  double vertical = 0.0, horizontal = 0.0;
  for (std::int64_t nc = 0; nc < N * C; ++nc) {
    const double* p = images.data() + nc * H * W;
    double* g = out.grad.data() + nc * H * W;
    for (std::int64_t i = 0; i < H; ++i) {
      for (std::int64_t j = 0; j < W; ++j) {
        const std::int64_t idx = i * W + j;
        if (i + 1 < H) {
          const double d = p[idx + W] - p[idx];
          vertical += std::abs(d);
          g[idx + W] += sign(d) * inv_v;
          g[idx] -= sign(d) * inv_v;
        }
        if (j + 1 < W) {
          const double d = p[idx + 1] - p[idx];
          horizontal += std::abs(d);
          g[idx + 1] += sign(d) * inv_h;
          g[idx] -= sign(d) * inv_h;
        }
      }
    }
  }
  out.loss.components["tv_vertical"] = vertical * inv_v;
  out.loss.components["tv_horizontal"] = horizontal * inv_h;
  out.loss.value = vertical * inv_v + horizontal * inv_h;
  return out;
}

CosineDistance cosine_grad_distance(const NamedTensors& first, const NamedTensors& second,
                                    bool want_grad) {
  require_same_layout(first, second, "cosine_grad_distance");
  const double ab = dot(first, second);
  const double na = std::sqrt(squared_norm(first));
  const double nb = std::sqrt(squared_norm(second));
  CosineDistance out;
  if (na == 0.0 || nb == 0.0) {
    out.value = 1.0;
    out.degenerate = true;
    if (want_grad) {
      for (const auto& [name, t] : first) out.grad_first.set(name, Tensor::zeros_like(t));
    }
    return out;
  }
  const double cosine = ab / (na * nb);
  out.value = 1.0 - cosine;
  if (want_grad) {
    const double c_other = -1.0 / (na * nb);
    const double c_self = ab / (na * na * na * nb);
    for (const auto& [name, t] : first) {
      Tensor g = second.at(name) * c_other;
      g.add_scaled(t, c_self);
      out.grad_first.set(name, std::move(g));
    }
  }
  return out;
}

Tensor flatten_rows(const Tensor& t) {
  if (t.rank() == 0) throw ShapeError("flatten_rows on scalar");
  const auto B = t.dim(0);
  return t.reshaped({B, B == 0 ? 0 : static_cast<std::int64_t>(t.size()) / B});
}

namespace {

struct MedianDistance {
  double value = 1.0;
  bool fallback = true;  // every row coincided
  // Row pairs whose distance forms the median, with their weight in it.
  std::vector<std::tuple<std::int64_t, std::int64_t, double>> pairs;
};

MedianDistance median_distance(const Tensor& r) {
  const auto B = r.dim(0), D = r.dim(1);
  std::vector<std::tuple<double, std::int64_t, std::int64_t>> dists;
  dists.reserve(static_cast<std::size_t>(B * (B - 1) / 2));
  for (std::int64_t i = 0; i < B; ++i) {
    for (std::int64_t j = i + 1; j < B; ++j) {
      double s = 0.0;
      for (std::int64_t k = 0; k < D; ++k) {
        const double d = r[i * D + k] - r[j * D + k];
        s += d * d;
      }
      dists.emplace_back(std::sqrt(s), i, j);
    }
  }
  MedianDistance out;
  if (dists.empty()) return out;
  std::sort(dists.begin(), dists.end());
  const std::size_t n = dists.size();
  if (n % 2) {
    out.value = std::get<0>(dists[n / 2]);
    out.pairs = {{std::get<1>(dists[n / 2]), std::get<2>(dists[n / 2]), 1.0}};
  } else {
    const auto& a = dists[n / 2 - 1];
    const auto& b = dists[n / 2];
    out.value = 0.5 * (std::get<0>(a) + std::get<0>(b));
    out.pairs = {{std::get<1>(a), std::get<2>(a), 0.5}, {std::get<1>(b), std::get<2>(b), 0.5}};
  }
  if (out.value > 0.0) {
    out.fallback = false;
  } else {
    out.value = 1.0;
    out.pairs.clear();
  }
  return out;
}

}  // namespace

double median_bandwidth(const Tensor& rows) { return median_distance(flatten_rows(rows)).value; }

namespace {

// Gaussian Gram matrix exp(-|r_i - r_j|^2 / (2 s^2)), B x B row-major.
std::vector<double> gaussian_gram(const Tensor& rows, double bandwidth) {
  const auto B = rows.dim(0), D = rows.dim(1);
  std::vector<double> k(static_cast<std::size_t>(B * B), 1.0);
  const double inv = 1.0 / (2.0 * bandwidth * bandwidth);
  for (std::int64_t i = 0; i < B; ++i) {
    for (std::int64_t j = i + 1; j < B; ++j) {
      double s = 0.0;
      for (std::int64_t d = 0; d < D; ++d) {
        const double diff = rows[i * D + d] - rows[j * D + d];
        s += diff * diff;
      }
      const double v = std::exp(-s * inv);
      k[i * B + j] = v;
      k[j * B + i] = v;
    }
  }
  return k;
}

// H M H with H = I - 11^T / B.
std::vector<double> double_center(const std::vector<double>& m, std::int64_t B) {
  std::vector<double> row_mean(B, 0.0), col_mean(B, 0.0);
  double total = 0.0;
  for (std::int64_t i = 0; i < B; ++i) {
    for (std::int64_t j = 0; j < B; ++j) {
      row_mean[i] += m[i * B + j];
      col_mean[j] += m[i * B + j];
      total += m[i * B + j];
    }
  }
  const double inv = 1.0 / static_cast<double>(B);
  std::vector<double> out(m.size());
  for (std::int64_t i = 0; i < B; ++i) {
    for (std::int64_t j = 0; j < B; ++j) {
      out[i * B + j] = m[i * B + j] - row_mean[i] * inv - col_mean[j] * inv + total * inv * inv;
    }
  }
  return out;
}

}  // namespace

HsicResult hsic(const Tensor& a, const Tensor& b, const HsicOptions& options) {
  const Tensor ra = flatten_rows(a);
  const Tensor rb = flatten_rows(b);
  const auto B = ra.dim(0);
  if (rb.dim(0) != B) throw ShapeError("hsic: row count mismatch");
  if (B < 4) throw Error("hsic: batch of " + std::to_string(B) + " is below the minimum of 4");
  for (auto bw : {options.bandwidth_a, options.bandwidth_b}) {
    if (bw && !(*bw > 0.0)) throw Error("hsic: bandwidth must be positive");
  }
  HsicResult out;
  const MedianDistance median_a = median_distance(ra);
  out.bandwidth_a = options.bandwidth_a.value_or(median_a.value);
  out.bandwidth_b = options.bandwidth_b.value_or(median_bandwidth(rb));
  const auto k = gaussian_gram(ra, out.bandwidth_a);
  const auto l = gaussian_gram(rb, out.bandwidth_b);
  const auto lc = double_center(l, B);
  const double norm = 1.0 / (static_cast<double>(B - 1) * static_cast<double>(B - 1));
  double trace = 0.0;
  for (std::size_t i = 0; i < k.size(); ++i) trace += k[i] * lc[i];
  out.value = trace * norm;
  if (options.want_grad) {
    const auto D = ra.dim(1);
    out.grad_a = Tensor(a.shape());
    const double s = out.bandwidth_a;
    const double inv_s2 = 1.0 / (s * s);
    double d_value_d_s = 0.0;
    for (std::int64_t i = 0; i < B; ++i) {
      for (std::int64_t j = 0; j < B; ++j) {
        if (i == j) continue;
        const double kij = k[i * B + j], lij = lc[i * B + j];
        const double coeff = -2.0 * norm * lij * kij * inv_s2;
        double dist2 = 0.0;
        for (std::int64_t d = 0; d < D; ++d) {
          const double diff = ra[i * D + d] - ra[j * D + d];
          out.grad_a[i * D + d] += coeff * diff;
          dist2 += diff * diff;
        }
        d_value_d_s += norm * lij * kij * dist2 * inv_s2 / s;
      }
    }
    // The median bandwidth moves with A through the distance of its pair(s).
    if (!options.bandwidth_a && !median_a.fallback) {
      for (const auto& [p, q, weight] : median_a.pairs) {
        double dist2 = 0.0;
        for (std::int64_t d = 0; d < D; ++d) {
          const double diff = ra[p * D + d] - ra[q * D + d];
          dist2 += diff * diff;
        }
        const double scale = d_value_d_s * weight / std::sqrt(dist2);
        for (std::int64_t d = 0; d < D; ++d) {
          const double diff = ra[p * D + d] - ra[q * D + d];
          out.grad_a[p * D + d] += scale * diff;
          out.grad_a[q * D + d] -= scale * diff;
        }
      }
    }
  }
  return out;
}

}  // namespace fedshield::objectives
