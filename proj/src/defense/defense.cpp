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

#include "fedshield/defense/defense.hpp"

#include <cmath>

#include "fedshield/errors.hpp"
#include "fedshield/io/archive.hpp"
#include "fedshield/io/csv.hpp"

namespace fedshield::defense {
namespace {

using objectives::LossValue;

void require_finite(const LossValue& loss, const char* what) {
  if (!std::isfinite(loss.value)) {
    std::string detail;
    for (const auto& [k, v] : loss.components) detail += " " + k + "=" + io::format_number(v);
    throw NumericError(std::string(what) + ": non-finite loss;" + detail);
  }
}

Tensor one_hot(const std::vector<int>& labels, int num_classes) {
  Tensor t({static_cast<std::int64_t>(labels.size()), num_classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    t[i * static_cast<std::size_t>(num_classes) + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  return t;
}

}  // namespace

const char* defense_name(DefenseKind kind) {
  switch (kind) {
    case DefenseKind::kNone: return "none";
    case DefenseKind::kProposedFixed: return "proposed_fixed";
    case DefenseKind::kProposedLearnable: return "proposed_learnable";
    case DefenseKind::kDpSgd: return "dp_sgd";
    case DefenseKind::kBido: return "bido";
  }
  return "?";
}

DefenseKind parse_defense(const std::string& name) {
  for (auto k : {DefenseKind::kNone, DefenseKind::kProposedFixed, DefenseKind::kProposedLearnable,
                 DefenseKind::kDpSgd, DefenseKind::kBido}) {
    if (name == defense_name(k)) return k;
  }
  throw ConfigError("defense.kind", "unknown defense '" + name +
                                        "' (expected none, proposed_fixed, proposed_learnable, "
                                        "dp_sgd or bido)");
}

bool uses_noise(DefenseKind kind) {
  return kind == DefenseKind::kProposedFixed || kind == DefenseKind::kProposedLearnable;
}

void DefenseConfig::validate() const {
  switch (kind) {
    case DefenseKind::kNone:
      break;
    case DefenseKind::kProposedFixed:
    case DefenseKind::kProposedLearnable:
      if (!(alpha >= 0.0)) throw ConfigError("defense.alpha", "must be non-negative");
      if (!std::isfinite(noise_mu)) throw ConfigError("defense.noise.mu", "must be finite");
      if (!(noise_sigma > 0.0) || !std::isfinite(noise_sigma)) {
        throw ConfigError("defense.noise.sigma", "must be positive");
      }
      if (kind == DefenseKind::kProposedLearnable) {
        if (pretrain.epochs < 0) throw ConfigError("defense.pretrain.epochs", "must be >= 0");
        if (!(pretrain.lr > 0.0)) throw ConfigError("defense.pretrain.lr", "must be positive");
        if (pretrain.batch_size < 1) {
          throw ConfigError("defense.pretrain.batch_size", "must be positive");
        }
      }
      break;
    case DefenseKind::kDpSgd:
      if (!(dp.sigma >= 0.0)) throw ConfigError("defense.dp.sigma", "must be non-negative");
      if (dp.clip_norm && !(*dp.clip_norm > 0.0)) {
        throw ConfigError("defense.dp.clip_norm", "must be positive when set");
      }
      break;
    case DefenseKind::kBido:
      if (!(bido.lambda_x >= 0.0)) throw ConfigError("defense.bido.lambda_x", "must be >= 0");
      if (!(bido.lambda_y >= 0.0)) throw ConfigError("defense.bido.lambda_y", "must be >= 0");
      break;
  }
}

optim::OptimizerKind DefenseConfig::optimizer() const {
  return kind == DefenseKind::kDpSgd ? optim::OptimizerKind::kSgd : optim::OptimizerKind::kAdam;
}

model::NoiseSpec DefenseConfig::noise_spec(std::int64_t latent_size) const {
  if (kind == DefenseKind::kProposedLearnable) {
    return model::NoiseSpec::learnable(noise_mu, noise_sigma, latent_size);
  }
  return model::NoiseSpec::fixed(noise_mu, noise_sigma);
}

bool TrainableSet::accepts(ParamGroup group) const {
  switch (group) {
    case ParamGroup::kEncoder: return encoder;
    case ParamGroup::kPredictor: return predictor;
    case ParamGroup::kDecoder: return decoder;
    case ParamGroup::kNoise: return noise;
  }
  return false;
}

optim::Optimizer::Filter TrainableSet::filter(const ModelParameters& params) const {
  return [this, &params](const std::string& name) { return accepts(params.group_of(name)); };
}

StepResult proposed_step(const model::DefenderModel& model, ModelParameters& params,
                         const data::Batch& batch, const DefenseConfig& config,
                         optim::Optimizer& optimizer, Rng& noise_rng,
                         const TrainableSet& trainable) {
  StepResult result;
  const auto B = batch.images.dim(0);
  {
    model::ForwardTrace trace;
    const Tensor eps = model.sample_epsilon(B, noise_rng);
    const auto out = model.forward(batch.images, params, &eps, &trace);
    auto dec = objectives::decoder_loss(batch.images, out.reconstruction, config.reduction);
    require_finite(dec.loss, "decoder step");
    TrainableSet first = trainable;
    if (config.decoder_only_first_step) first = {false, false, trainable.decoder, false};
    NamedTensors grads;
    model.backward(trace, params,
                   {&dec.grad, nullptr, nullptr, config.decoder_only_first_step}, grads);
    optimizer.step(params.tensors(), grads, first.filter(params));
    result.decoder = dec.loss;
  }
  {
    model::ForwardTrace trace;
    const Tensor eps = model.sample_epsilon(B, noise_rng);
    const auto out = model.forward(batch.images, params, &eps, &trace);
    auto pred = objectives::predictor_loss(batch.labels, out.logits, batch.images,
                                           out.reconstruction, config.alpha, config.reduction);
    require_finite(pred.loss, "predictor step");
    NamedTensors grads;
    model.backward(trace, params, {&pred.grad_reconstruction, &pred.grad_logits, nullptr, false},
                   grads);
    optimizer.step(params.tensors(), grads, trainable.filter(params));
    result.loss = pred.loss;
  }
  return result;
}

StepResult dp_sgd_step(const model::DefenderModel& model, ModelParameters& params,
                       const data::Batch& batch, const DpConfig& config, double lr, Rng& rng) {
  if (!(config.sigma >= 0.0)) throw Error("dp_sgd_step: sigma must be non-negative");
  model::ForwardTrace trace;
  const auto out = model.forward(batch.images, params, nullptr, &trace, false);
  auto ce = objectives::cross_entropy(batch.labels, out.logits);
  require_finite(ce.loss, "dp-sgd step");
  NamedTensors grads;
  model.backward(trace, params, {nullptr, &ce.grad, nullptr, false}, grads);
  double scale = 1.0;
  if (config.clip_norm) {
    const double norm = std::sqrt(squared_norm(grads));
    if (norm > *config.clip_norm) scale = *config.clip_norm / norm;
  }
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (auto& [name, g] : grads) {
    for (double& v : g.values()) v = v * scale + config.sigma * gauss(rng);
    params.at(name).add_scaled(g, -lr);
  }
  StepResult r;
  r.loss = ce.loss;
  r.loss.components["clip_scale"] = scale;
  r.loss.components["ce"] = ce.loss.value;
  return r;
}

StepResult bido_step(const model::DefenderModel& model, ModelParameters& params,
                     const data::Batch& batch, const BidoConfig& config,
                     optim::Optimizer& optimizer) {
  if (config.lambda_x < 0.0 || config.lambda_y < 0.0) {
    throw Error("bido_step: lambda_x and lambda_y must be non-negative");
  }
  const auto B = batch.images.dim(0);
  if (B < 4) throw Error("bido_step: batch of " + std::to_string(B) + " is below 4");
  model::ForwardTrace trace;
  const auto out = model.forward(batch.images, params, nullptr, &trace, false);
  auto ce = objectives::cross_entropy(batch.labels, out.logits);
  objectives::HsicOptions options;
  options.want_grad = true;
  const auto hx = objectives::hsic(out.latent, batch.images, options);
  const auto hy =
      objectives::hsic(out.latent, one_hot(batch.labels, model.arch().num_classes), options);
  LossValue loss;
  loss.components = {{"ce", ce.loss.value}, {"hsic_x", hx.value}, {"hsic_y", hy.value}};
  loss.value = ce.loss.value + config.lambda_x * hx.value - config.lambda_y * hy.value;
  require_finite(loss, "bido step");
  Tensor g_latent = hx.grad_a * config.lambda_x;
  g_latent.add_scaled(hy.grad_a, -config.lambda_y);
  NamedTensors grads;
  model.backward(trace, params, {nullptr, &ce.grad, &g_latent, false}, grads);
  optimizer.step(params.tensors(), grads);
  return {loss, std::nullopt};
}

StepResult plain_step(const model::DefenderModel& model, ModelParameters& params,
                      const data::Batch& batch, optim::Optimizer& optimizer) {
  model::ForwardTrace trace;
  const auto out = model.forward(batch.images, params, nullptr, &trace, false);
  auto ce = objectives::cross_entropy(batch.labels, out.logits);
  require_finite(ce.loss, "training step");
  NamedTensors grads;
  model.backward(trace, params, {nullptr, &ce.grad, nullptr, false}, grads);
  optimizer.step(params.tensors(), grads);
  return {ce.loss, std::nullopt};
}

DefenseStrategy::DefenseStrategy(DefenseConfig config, double lr, std::uint64_t seed)
    : config_(config), optimizer_(config.optimizer(), lr), rng_(make_rng(seed, {kStreamNoise})) {
  config_.validate();
}

std::int64_t DefenseStrategy::min_batch() const {
  return config_.kind == DefenseKind::kBido ? 4 : 1;
}

StepResult DefenseStrategy::step(const model::DefenderModel& model, ModelParameters& params,
                                 const data::Batch& batch, optim::Optimizer* optimizer) {
  optim::Optimizer& opt = optimizer ? *optimizer : optimizer_;
  switch (config_.kind) {
    case DefenseKind::kNone:
      return plain_step(model, params, batch, opt);
    case DefenseKind::kProposedFixed:
    case DefenseKind::kProposedLearnable:
      return proposed_step(model, params, batch, config_, opt, rng_);
    case DefenseKind::kDpSgd:
      return dp_sgd_step(model, params, batch, config_.dp, opt.lr(), rng_);
    case DefenseKind::kBido:
      return bido_step(model, params, batch, config_.bido, opt);
  }
  throw Error("unreachable defense kind");
}

PretrainResult pretrain_noise(const model::DefenderModel& model, const data::DatasetSplit& split,
                              const DefenseConfig& config, std::uint64_t seed) {
  if (config.kind != DefenseKind::kProposedLearnable) {
    throw Error("pretrain_noise: defense kind must be proposed_learnable, got " +
                std::string(defense_name(config.kind)));
  }
  config.validate();
  const auto initial = config.noise_spec(model.latent_size());
  ModelParameters params = model.init_parameters(derive_seed(seed, {kStreamPretrain}), initial);
  optim::Optimizer optimizer(optim::OptimizerKind::kAdam, config.pretrain.lr);
  Rng noise_rng = make_rng(seed, {kStreamPretrain, kStreamNoise});
  const TrainableSet trainable{true, true, true, true};
  const auto bs = std::min<std::int64_t>(config.pretrain.batch_size, split.size());

  PretrainResult result;
  for (int epoch = 0; epoch < config.pretrain.epochs; ++epoch) {
    PretrainEpoch e{epoch, 0.0, 0.0, 0.0};
    int batches = 0;
    for (const auto& idx : data::batch_indices(split.size(), bs, derive_seed(seed, {kStreamPretrain}),
                                               static_cast<std::uint64_t>(epoch), true)) {
      const auto batch = data::make_batch(split, idx);
      const auto r = proposed_step(model, params, batch, config, optimizer, noise_rng, trainable);
      e.decoder_loss += r.decoder->value;
      e.predictor_loss += r.loss.value;
      e.mean_abs_r += r.loss.components.at("corr");
      ++batches;
    }
    e.decoder_loss /= batches;
    e.predictor_loss /= batches;
    e.mean_abs_r /= batches;
    result.log.push_back(e);
    for (double v : params.at(model::kNoiseRho).values()) {
      if (!(model::softplus(v) > 0.0)) throw NumericError("pretrain_noise: sigma left (0, inf)");
    }
  }
  result.noise = model::noise_spec_from_parameters(params, initial);
  if (config.pretrain.epochs == 0) result.noise = initial;
  return result;
}

void write_pretrain_log(const std::filesystem::path& path, const std::vector<PretrainEpoch>& log) {
  io::CsvTable t;
  t.header = {"epoch", "l_decoder", "l_predictor", "mean_abs_r"};
  for (const auto& e : log) {
    t.rows.push_back({std::to_string(e.epoch), io::format_number(e.decoder_loss),
                      io::format_number(e.predictor_loss), io::format_number(e.mean_abs_r)});
  }
  io::write_csv(path, t);
}

void save_noise(const std::filesystem::path& path, const model::NoiseSpec& spec) {
  ModelParameters p;
  model::set_noise_parameters(p, spec);
  nlohmann::json meta = {{"kind", "noise"},
                         {"mode", model::noise_mode_name(spec.mode)},
                         {"init_mu", spec.init_mu},
                         {"init_sigma", spec.init_sigma},
                         {"sigma", spec.sigma}};
  io::write_archive(path, io::archive_from_parameters(p, meta));
}

model::NoiseSpec load_noise(const std::filesystem::path& path) {
  const auto archive = io::read_archive(path);
  const auto params = io::parameters_from_archive(archive);
  if (!params.contains(model::kNoiseMu) || !params.contains(model::kNoiseRho)) {
    throw IngestError(path.string() + ": not a noise file (needs noise.mu and noise.rho)");
  }
  model::NoiseSpec like;
  like.mode = model::parse_noise_mode(archive.meta.value("mode", std::string("learnable")));
  like.init_mu = archive.meta.value("init_mu", 0.0);
  like.init_sigma = archive.meta.value("init_sigma", 0.1);
  auto spec = model::noise_spec_from_parameters(params, like);
  // Stored sigma is exact; rho round-trips through softplus with rounding.
  if (archive.meta.contains("sigma")) spec.sigma = archive.meta.at("sigma").get<std::vector<double>>();
  return spec;
}

}  // namespace fedshield::defense
