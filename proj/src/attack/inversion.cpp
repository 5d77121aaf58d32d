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

#include "fedshield/attack/inversion.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <thread>

#include "fedshield/errors.hpp"
#include "fedshield/objectives/losses.hpp"
#include "fedshield/rng.hpp"

namespace fedshield::attack {
namespace {

Tensor softmax_rows(const Tensor& logits) {
  Tensor p = logits;
  const auto B = p.dim(0), K = p.dim(1);
  for (std::int64_t b = 0; b < B; ++b) {
    double* row = p.data() + b * K;
    const double mx = *std::max_element(row, row + K);
    double sum = 0.0;
    for (std::int64_t k = 0; k < K; ++k) sum += (row[k] = std::exp(row[k] - mx));
    for (std::int64_t k = 0; k < K; ++k) row[k] /= sum;
  }
  return p;
}

std::string final_weight_name(const nn::Sequential& network) {
  for (auto it = network.layers().rbegin(); it != network.layers().rend(); ++it) {
    if (const auto* l = std::get_if<nn::LinearLayer>(&*it)) return l->name + ".weight";
  }
  throw Error("attack: victim network has no linear layer");
}

void clamp_channels(Tensor& x, const std::vector<double>& lower, const std::vector<double>& upper) {
  const auto B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t c = 0; c < C; ++c) {
      double* p = x.data() + (b * C + c) * HW;
      for (std::int64_t i = 0; i < HW; ++i) p[i] = std::clamp(p[i], lower[c], upper[c]);
    }
  }
}

double schedule(const AttackConfig& config, int iteration) {
  if (!config.lr_decay) return config.lr;
  double lr = config.lr;
  for (int milestone : {config.iterations * 3 / 8, config.iterations * 5 / 8,
                        config.iterations * 7 / 8}) {
    if (iteration >= milestone) lr *= 0.1;
  }
  return lr;
}

struct RestartOutcome {
  Tensor best;
  double objective = std::numeric_limits<double>::infinity();
  std::vector<double> trace;
  bool aborted = false;
};

RestartOutcome run_restart(const VictimModel& victim, const Shape& batch_shape,
                           const std::vector<int>& labels, const NamedTensors& target,
                           const AttackConfig& config, Rng rng) {
  const auto C = batch_shape[1];
  Tensor x;
  if (config.init == InitMode::kGaussian) {
    x = randn(batch_shape, rng);
  } else {
    x = Tensor(batch_shape);
    const auto HW = batch_shape[2] * batch_shape[3];
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::int64_t b = 0; b < batch_shape[0]; ++b) {
      for (std::int64_t c = 0; c < C; ++c) {
        double* p = x.data() + (b * C + c) * HW;
        for (std::int64_t i = 0; i < HW; ++i) {
          p[i] = victim.lower[c] + (victim.upper[c] - victim.lower[c]) * u(rng);
        }
      }
    }
  }
  clamp_channels(x, victim.lower, victim.upper);

  RestartOutcome out;
  Tensor m = Tensor::zeros_like(x), v = Tensor::zeros_like(x);
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  for (int it = 0; it < config.iterations; ++it) {
    auto obj = attack_objective(victim, x, labels, target, config.tv_weight, true);
    if (!std::isfinite(obj.value) || !all_finite(obj.grad)) {
      out.aborted = true;
      out.objective = std::numeric_limits<double>::infinity();
      return out;
    }
    out.trace.push_back(obj.value);
    if (obj.value < out.objective) {
      out.objective = obj.value;
      out.best = x;
    }
    const double lr = schedule(config, it);
    const double t = static_cast<double>(it + 1);
    const double bc1 = 1.0 - std::pow(beta1, t), bc2 = 1.0 - std::pow(beta2, t);
    for (std::size_t i = 0; i < x.size(); ++i) {
      double g = obj.grad[i];
      if (config.signed_gradient) g = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
      m[i] = beta1 * m[i] + (1.0 - beta1) * g;
      v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
      x[i] -= (lr / bc1) * m[i] / (std::sqrt(v[i]) / std::sqrt(bc2) + eps);
    }
    clamp_channels(x, victim.lower, victim.upper);
  }
  const auto last = attack_objective(victim, x, labels, target, config.tv_weight, false);
  if (!std::isfinite(last.value)) {
    if (out.best.empty()) out.aborted = true;
    return out;
  }
  out.trace.push_back(last.value);
  if (last.value < out.objective) {
    out.objective = last.value;
    out.best = x;
  }
  return out;
}

}  // namespace

InitMode parse_init(const std::string& name) {
  if (name == "gaussian") return InitMode::kGaussian;
  if (name == "uniform") return InitMode::kUniform;
  throw ConfigError("attack.init", "unknown init '" + name + "'");
}

LabelMode parse_label_mode(const std::string& name) {
  if (name == "known") return LabelMode::kKnown;
  if (name == "inferred") return LabelMode::kInferred;
  throw ConfigError("attack.labels", "unknown label mode '" + name + "'");
}

void AttackConfig::validate() const {
  if (iterations < 0) throw ConfigError("attack.iterations", "must be >= 0");
  if (!(lr > 0.0)) throw ConfigError("attack.lr", "must be positive");
  if (!(tv_weight >= 0.0)) throw ConfigError("attack.tv_weight", "must be >= 0");
  if (restarts < 1) throw ConfigError("attack.restarts", "must be at least 1");
  if (batch_size < 1) throw ConfigError("attack.batch_size", "must be positive");
  if (threads < 1) throw ConfigError("threads", "must be at least 1");
}

PseudoGradient pseudo_gradient(const fl::WeightUpdate& update) {
  if (!(update.client_lr > 0.0)) throw Error("pseudo_gradient: client_lr must be positive");
  PseudoGradient out;
  bool any = false;
  for (const auto& [name, d] : update.deltas) {
    Tensor g = d * (-1.0 / update.client_lr);
    for (double v : d.values()) any = any || v != 0.0;
    out.gradient.set(name, std::move(g));
  }
  out.degenerate = !any;
  return out;
}

LabelInference infer_labels(const NamedTensors& gradient, const std::string& final_weight,
                            std::int64_t batch_size) {
  const Tensor* w = gradient.find(final_weight);
  if (!w || w->rank() != 2) throw Error("infer_labels: no final linear weight '" + final_weight + "'");
  const auto K = w->dim(0), F = w->dim(1);
  std::vector<std::pair<double, int>> negative;
  for (std::int64_t k = 0; k < K; ++k) {
    double s = 0.0;
    for (std::int64_t f = 0; f < F; ++f) s += (*w)[k * F + f];
    if (s < 0.0) negative.emplace_back(s, static_cast<int>(k));
  }
  LabelInference out;
  if (negative.empty()) {
    out.ambiguous = true;
    return out;
  }
  std::sort(negative.begin(), negative.end());
  if (batch_size > 0 && static_cast<std::int64_t>(negative.size()) != batch_size) {
    out.ambiguous = true;
    for (std::int64_t i = 0; i < batch_size; ++i) {
      out.labels.push_back(negative[static_cast<std::size_t>(i) % negative.size()].second);
    }
  } else {
    for (const auto& [s, k] : negative) out.labels.push_back(k);
  }
  if (batch_size > K) out.ambiguous = true;
  std::sort(out.labels.begin(), out.labels.end());
  return out;
}

AttackObjective attack_objective(const VictimModel& victim, const Tensor& images,
                                 const std::vector<int>& labels, const NamedTensors& target,
                                 double tv_weight, bool want_grad) {
  nn::SequentialTrace trace;
  const Tensor logits = victim.network.forward(images, victim.params, &trace);
  const auto ce = objectives::cross_entropy(labels, logits);
  NamedTensors raw;
  victim.network.backward(ce.grad, trace, victim.params, &raw, false);
  NamedTensors grads;
  for (const auto& [name, _] : target) {
    const Tensor* g = raw.find(name);
    if (!g) throw Error("attack: observed update has '" + name + "' which the model lacks");
    grads.set(name, *g);
  }
  const auto cos = objectives::cosine_grad_distance(grads, target, want_grad);
  const auto tv = objectives::total_variation(images);

  AttackObjective out;
  out.cosine = cos.value;
  out.tv = tv.loss.value;
  out.value = cos.value + tv_weight * tv.loss.value;
  if (!want_grad) return out;

  out.grad = tv.grad * tv_weight;
  if (cos.degenerate) return out;
  // d/dx <v, dL/dtheta> is the input gradient of the directional derivative
  // of L along v, obtained by reverse mode through a tangent forward pass.
  nn::TangentTrace ttrace;
  const auto dual = victim.network.forward_tangent(images, nullptr, victim.params, cos.grad_first,
                                                   &ttrace);
  const Tensor p = softmax_rows(dual.primal);
  const auto B = p.dim(0), K = p.dim(1);
  const double inv_b = 1.0 / static_cast<double>(B);
  Tensor adj_z(p.shape()), adj_zdot(p.shape());
  for (std::int64_t b = 0; b < B; ++b) {
    const double* pr = p.data() + b * K;
    const double* zd = dual.tangent.data() + b * K;
    double pz = 0.0;
    for (std::int64_t k = 0; k < K; ++k) pz += pr[k] * zd[k];
    for (std::int64_t k = 0; k < K; ++k) {
      adj_zdot[b * K + k] = (pr[k] - (k == labels[b] ? 1.0 : 0.0)) * inv_b;
      adj_z[b * K + k] = pr[k] * (zd[k] - pz) * inv_b;
    }
  }
  const auto back = victim.network.backward_tangent(adj_z, adj_zdot, ttrace, victim.params,
                                                    cos.grad_first);
  out.grad += back.primal;
  return out;
}

ReconstructionResult invert(const fl::WeightUpdate& update, const VictimModel& victim,
                            const Shape& image_shape, const std::vector<int>& labels,
                            const AttackConfig& config, std::uint64_t seed) {
  config.validate();
  if (image_shape.size() != 3) throw ShapeError("invert: image shape must be [C, H, W]");
  if (victim.lower.size() != static_cast<std::size_t>(image_shape[0]) ||
      victim.upper.size() != victim.lower.size()) {
    throw ShapeError("invert: pixel bounds must have one entry per channel");
  }
  const auto pg = pseudo_gradient(update);
  NamedTensors target;
  for (const auto& [name, g] : pg.gradient) {
    if (victim.params.contains(name)) target.set(name, g);
  }
  if (target.empty()) throw Error("invert: update shares no parameters with the victim model");

  ReconstructionResult result;
  if (config.label_mode == LabelMode::kKnown) {
    if (labels.empty()) throw Error("invert: known-label mode needs labels");
    result.labels = labels;
  } else {
    auto inferred = infer_labels(target, final_weight_name(victim.network), config.batch_size);
    if (inferred.labels.empty()) throw Error("invert: no label could be inferred from the update");
    result.labels = inferred.labels;
    result.labels_ambiguous = inferred.ambiguous;
  }
  Shape batch_shape{static_cast<std::int64_t>(result.labels.size())};
  batch_shape.insert(batch_shape.end(), image_shape.begin(), image_shape.end());

  std::vector<RestartOutcome> outcomes(static_cast<std::size_t>(config.restarts));
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(outcomes.size());
  auto worker = [&] {
    for (int r = next++; r < config.restarts; r = next++) {
      try {
        outcomes[static_cast<std::size_t>(r)] =
            run_restart(victim, batch_shape, result.labels, target, config,
                        make_rng(seed, {kStreamAttack, static_cast<std::uint64_t>(r)}));
      } catch (...) {
        errors[static_cast<std::size_t>(r)] = std::current_exception();
      }
    }
  };
  const int workers = std::min(config.threads, config.restarts);
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  int best = -1;
  for (int r = 0; r < config.restarts; ++r) {
    const auto& o = outcomes[static_cast<std::size_t>(r)];
    result.restart_objective.push_back(o.objective);
    result.restart_aborted.push_back(o.aborted);
    if (!o.aborted && (best < 0 || o.objective < outcomes[static_cast<std::size_t>(best)].objective)) {
      best = r;
    }
  }
  if (best < 0) throw NumericError("invert: every restart produced a non-finite objective");
  auto& chosen = outcomes[static_cast<std::size_t>(best)];
  result.images = std::move(chosen.best);
  result.loss_trace = std::move(chosen.trace);
  result.objective = chosen.objective;
  result.best_restart = best;
  return result;
}

std::vector<std::size_t> match_reconstructions(const Tensor& reconstructions,
                                               const Tensor& originals) {
  require_same_shape(reconstructions, originals, "match_reconstructions");
  const auto B = static_cast<std::size_t>(originals.dim(0));
  const auto D = static_cast<std::size_t>(originals.row_size());
  std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t j = 0; j < B; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < D; ++k) {
        const double d = reconstructions[i * D + k] - originals[j * D + k];
        s += d * d;
      }
      pairs.emplace_back(s / static_cast<double>(D), i, j);
    }
  }
  std::sort(pairs.begin(), pairs.end());
  std::vector<std::size_t> matched(B, B);
  std::vector<bool> taken(B, false);
  for (const auto& [mse, i, j] : pairs) {
    if (matched[i] != B || taken[j]) continue;
    matched[i] = j;
    taken[j] = true;
  }
  return matched;
}

}  // namespace fedshield::attack
