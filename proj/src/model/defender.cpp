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

#include "fedshield/model/defender.hpp"

#include <algorithm>
#include <cmath>

#include "fedshield/errors.hpp"
#include "fedshield/io/archive.hpp"

namespace fedshield::model {
namespace {

constexpr const char* kEncoderPrefix = "enc.";
constexpr const char* kPredictorPrefix = "pred.";
constexpr const char* kDecoderPrefix = "dec.";

// Padding and output padding that make a stride-2 transposed conv land on
// exactly `target` pixels. Negative padding enlarges the output.
std::pair<std::int64_t, std::int64_t> fit_transposed(std::int64_t in, std::int64_t kernel,
                                                     std::int64_t target) {
  const std::int64_t natural = (in - 1) * 2 + kernel;
  const std::int64_t d = natural - target;
  if (d % 2 == 0) return {d / 2, 0};
  return {(d + 1) / 2, 1};
}

ParamGroup group_for(const std::string& name) {
  if (name.rfind(kEncoderPrefix, 0) == 0) return ParamGroup::kEncoder;
  if (name.rfind(kPredictorPrefix, 0) == 0) return ParamGroup::kPredictor;
  if (name.rfind(kDecoderPrefix, 0) == 0) return ParamGroup::kDecoder;
  return ParamGroup::kNoise;
}

// Element i of the latent uses noise parameter i (per element) or 0 (scalar).
inline std::size_t noise_index(std::size_t i, std::size_t len) { return len == 1 ? 0 : i; }

}  // namespace

std::int64_t ArchitectureConfig::resolved_final_kernel() const {
  if (final_deconv_kernel > 0) return final_deconv_kernel;
  return (height == 32 && width == 32) ? 2 : 4;
}

std::int64_t ArchitectureConfig::hidden(std::int64_t channels_at_full_width) const {
  if (width_divisor < 1) throw ConstructionError("arch.width_divisor must be at least 1");
  return std::max<std::int64_t>(1, channels_at_full_width / width_divisor);
}

NoiseSpec NoiseSpec::fixed(double mu, double sigma) {
  NoiseSpec s;
  s.mode = NoiseMode::kFixed;
  s.mu = {mu};
  s.sigma = {sigma};
  s.init_mu = mu;
  s.init_sigma = sigma;
  return s;
}

NoiseSpec NoiseSpec::learnable(double mu0, double sigma0, std::int64_t latent_size) {
  NoiseSpec s;
  s.mode = NoiseMode::kLearnable;
  s.mu.assign(static_cast<std::size_t>(latent_size), mu0);
  s.sigma.assign(static_cast<std::size_t>(latent_size), sigma0);
  s.init_mu = mu0;
  s.init_sigma = sigma0;
  return s;
}

void NoiseSpec::validate(std::int64_t latent_size) const {
  const auto m = static_cast<std::size_t>(latent_size);
  auto ok_len = [&](std::size_t n) { return n == 1 || n == m; };
  if (!ok_len(mu.size()) || !ok_len(sigma.size())) {
    throw Error("noise: mu/sigma must have length 1 or " + std::to_string(m));
  }
  if (mode == NoiseMode::kLearnable && (mu.size() != m || sigma.size() != m)) {
    throw Error("noise: learnable mode needs per-element mu and sigma of length " +
                std::to_string(m));
  }
  for (double s : sigma) {
    if (!(s > 0.0) || !std::isfinite(s)) throw Error("noise: sigma must be positive and finite");
  }
  for (double v : mu) {
    if (!std::isfinite(v)) throw Error("noise: mu must be finite");
  }
}

const char* noise_mode_name(NoiseMode mode) {
  return mode == NoiseMode::kFixed ? "fixed" : "learnable";
}

NoiseMode parse_noise_mode(const std::string& name) {
  if (name == "fixed") return NoiseMode::kFixed;
  if (name == "learnable") return NoiseMode::kLearnable;
  throw Error("unknown noise mode '" + name + "'");
}

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

double inverse_softplus(double y) {
  if (!(y > 0.0)) throw Error("inverse_softplus: argument must be positive");
  return y > 30.0 ? y : std::log(std::expm1(y));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void set_noise_parameters(ModelParameters& params, const NoiseSpec& spec) {
  Tensor mu({static_cast<std::int64_t>(spec.mu.size())}, spec.mu);
  std::vector<double> rho;
  for (double s : spec.sigma) rho.push_back(inverse_softplus(s));
  Tensor rho_t({static_cast<std::int64_t>(rho.size())}, rho);
  if (params.contains(kNoiseMu)) {
    params.at(kNoiseMu) = std::move(mu);
    params.at(kNoiseRho) = std::move(rho_t);
  } else {
    params.add(kNoiseMu, ParamGroup::kNoise, std::move(mu));
    params.add(kNoiseRho, ParamGroup::kNoise, std::move(rho_t));
  }
}

NoiseSpec noise_spec_from_parameters(const ModelParameters& params, const NoiseSpec& like) {
  NoiseSpec s = like;
  const auto& mu = params.at(kNoiseMu);
  const auto& rho = params.at(kNoiseRho);
  s.mu.assign(mu.data(), mu.data() + mu.size());
  s.sigma.clear();
  for (double r : rho.values()) s.sigma.push_back(softplus(r));
  return s;
}

DefenderModel::DefenderModel(ArchitectureConfig arch) : arch_(arch) {
  if (arch_.channels < 1 || arch_.height < 1 || arch_.width < 1) {
    throw ConstructionError("arch: input dimensions must be positive");
  }
  if (arch_.num_classes < 2) throw ConstructionError("arch: num_classes must be at least 2");

  const std::int64_t widths[] = {64, 128, 128, 256, 256, 256, 256, 256, 256};
  std::int64_t in = arch_.channels;
  for (int i = 0; i < 9; ++i) {
    const auto out = arch_.hidden(widths[i]);
    encoder_.append(nn::Conv2dLayer{std::string(kEncoderPrefix) + "conv" + std::to_string(i + 1),
                                    in, out, 3, 1, {1, 1}});
    encoder_.append(nn::ReluLayer{});
    if (i == 5) encoder_.append(nn::MaxPool2dLayer{3});
    in = out;
  }
  const Shape latent = encoder_.output_shape({1, arch_.channels, arch_.height, arch_.width});
  latent_shape_ = {latent[1], latent[2], latent[3]};

  predictor_.append(nn::MaxPool2dLayer{3});
  predictor_.append(nn::FlattenLayer{});
  const Shape pooled = nn::Sequential(predictor_).output_shape(latent);
  predictor_features_ = pooled[1];
  predictor_.append(nn::LinearLayer{std::string(kPredictorPrefix) + "fc", predictor_features_,
                                    arch_.num_classes});

  const auto c = latent_shape_[0];
  const auto hid = arch_.hidden(256);
  decoder_.append(nn::ConvTranspose2dLayer{std::string(kDecoderPrefix) + "deconv1", c, hid, 3, 1,
                                           {0, 0}, {0, 0}});
  decoder_.append(nn::BatchNorm2dLayer{std::string(kDecoderPrefix) + "bn1", hid});
  decoder_.append(nn::ReluLayer{});
  decoder_.append(nn::ConvTranspose2dLayer{std::string(kDecoderPrefix) + "deconv2", hid, hid, 4, 1,
                                           {0, 0}, {0, 0}});
  decoder_.append(nn::BatchNorm2dLayer{std::string(kDecoderPrefix) + "bn2", hid});
  decoder_.append(nn::ReluLayer{});
  const Shape mid = decoder_.output_shape(latent);
  const auto k = arch_.resolved_final_kernel();
  const auto [ph, oph] = fit_transposed(mid[2], k, arch_.height);
  const auto [pw, opw] = fit_transposed(mid[3], k, arch_.width);
  decoder_.append(nn::ConvTranspose2dLayer{std::string(kDecoderPrefix) + "deconv3", hid,
                                           arch_.channels, k, 2, {ph, pw}, {oph, opw}});
  const Shape out = decoder_.output_shape(latent);
  if (out[1] != arch_.channels || out[2] != arch_.height || out[3] != arch_.width) {
    throw ConstructionError("arch: decoder output " + shape_string(out) +
                            " does not match the input shape");
  }
}

nn::Sequential DefenderModel::classifier() const {
  nn::Sequential s = encoder_;
  s.extend(predictor_);
  return s;
}

ModelParameters DefenderModel::init_parameters(std::uint64_t seed, const NoiseSpec& noise) const {
  noise.validate(latent_size());
  Rng rng = make_rng(seed, {kStreamInit});
  NamedTensors raw;
  encoder_.init_parameters(raw, rng);
  predictor_.init_parameters(raw, rng);
  decoder_.init_parameters(raw, rng);
  ModelParameters params;
  for (auto& [name, t] : raw) params.add(name, group_for(name), std::move(t));
  set_noise_parameters(params, noise);
  return params;
}

Tensor DefenderModel::sample_epsilon(std::int64_t batch, Rng& rng) const {
  Shape s{batch};
  s.insert(s.end(), latent_shape_.begin(), latent_shape_.end());
  return randn(s, rng);
}

ForwardResult DefenderModel::forward(const Tensor& x, const ModelParameters& params,
                                     const Tensor* epsilon, ForwardTrace* trace,
                                     bool want_reconstruction) const {
  if (x.rank() != 4 || x.dim(1) != arch_.channels || x.dim(2) != arch_.height ||
      x.dim(3) != arch_.width) {
    throw ShapeError("defender: input " + shape_string(x.shape()) + " does not match [B, " +
                     shape_string(arch_.input_shape()) + "]");
  }
  const NamedTensors& p = params.tensors();
  ForwardResult r;
  r.latent = encoder_.forward(x, p, trace ? &trace->encoder : nullptr);
  r.noisy_latent = r.latent;
  if (epsilon) {
    require_same_shape(*epsilon, r.latent, "defender noise");
    const Tensor& mu = params.at(kNoiseMu);
    const Tensor& rho = params.at(kNoiseRho);
    const auto m = static_cast<std::size_t>(latent_size());
    double* z = r.noisy_latent.data();
    const double* eps = epsilon->data();
    for (std::size_t i = 0; i < r.noisy_latent.size(); ++i) {
      const std::size_t j = i % m;
      z[i] += mu[noise_index(j, mu.size())] + softplus(rho[noise_index(j, rho.size())]) * eps[i];
    }
    if (trace) trace->epsilon = *epsilon;
  } else if (trace) {
    trace->epsilon = Tensor();
  }
  r.logits = predictor_.forward(r.noisy_latent, p, trace ? &trace->predictor : nullptr);
  if (want_reconstruction) {
    r.reconstruction = decoder_.forward(r.noisy_latent, p, trace ? &trace->decoder : nullptr);
  }
  if (trace) trace->ran_decoder = want_reconstruction;
  return r;
}

void DefenderModel::backward(const ForwardTrace& trace, const ModelParameters& params,
                             const BackwardRequest& request, NamedTensors& grads) const {
  const NamedTensors& p = params.tensors();
  Shape latent_batch{trace.encoder.inputs.empty() ? 0 : trace.encoder.inputs.front().dim(0)};
  latent_batch.insert(latent_batch.end(), latent_shape_.begin(), latent_shape_.end());
  Tensor g_z(latent_batch);
  bool any = false;
  if (request.grad_reconstruction) {
    if (!trace.ran_decoder) throw Error("defender: backward through a decoder that did not run");
    g_z += decoder_.backward(*request.grad_reconstruction, trace.decoder, p, &grads);
    any = true;
  }
  if (request.grad_logits) {
    g_z += predictor_.backward(*request.grad_logits, trace.predictor, p, &grads);
    any = true;
  }
  if (any && !trace.epsilon.empty()) {
    const Tensor& mu = params.at(kNoiseMu);
    const Tensor& rho = params.at(kNoiseRho);
    Tensor g_mu = Tensor::zeros_like(mu);
    Tensor g_rho = Tensor::zeros_like(rho);
    const auto m = static_cast<std::size_t>(latent_size());
    for (std::size_t i = 0; i < g_z.size(); ++i) {
      const std::size_t j = i % m;
      const std::size_t jr = noise_index(j, rho.size());
      g_mu[noise_index(j, mu.size())] += g_z[i];
      g_rho[jr] += g_z[i] * trace.epsilon[i] * sigmoid(rho[jr]);
    }
    grads.accumulate(kNoiseMu, g_mu);
    grads.accumulate(kNoiseRho, g_rho);
  }
  if (request.stop_at_latent) return;
  if (request.grad_latent) {
    g_z += *request.grad_latent;
    any = true;
  }
  if (!any) return;
  encoder_.backward(g_z, trace.encoder, p, &grads, false);
}

std::vector<int> DefenderModel::predict(const Tensor& images, const ModelParameters& params,
                                        Rng* noise_rng, std::int64_t batch_size) const {
  const auto n = images.dim(0);
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::int64_t start = 0; start < n; start += batch_size) {
    const auto end = std::min(n, start + batch_size);
    const Tensor x = images.slice_rows(start, end);
    Tensor eps;
    if (noise_rng) eps = sample_epsilon(end - start, *noise_rng);
    const auto r = forward(x, params, noise_rng ? &eps : nullptr, nullptr, false);
    const auto K = r.logits.dim(1);
    for (std::int64_t b = 0; b < end - start; ++b) {
      const double* row = r.logits.data() + b * K;
      out.push_back(static_cast<int>(std::max_element(row, row + K) - row));
    }
  }
  return out;
}

ModelParameters shared_parameters(const ModelParameters& params) {
  return params.subset({ParamGroup::kEncoder, ParamGroup::kPredictor});
}

ModelParameters merge_parameters(const ModelParameters& shared, const ModelParameters& local) {
  ModelParameters out = local;
  out.overlay(shared);
  return out;
}

nlohmann::json arch_to_json(const ArchitectureConfig& arch) {
  return {{"channels", arch.channels},
          {"height", arch.height},
          {"width", arch.width},
          {"num_classes", arch.num_classes},
          {"final_deconv_kernel", arch.final_deconv_kernel},
          {"width_divisor", arch.width_divisor}};
}

ArchitectureConfig arch_from_json(const nlohmann::json& j) {
  ArchitectureConfig a;
  a.channels = j.at("channels").get<std::int64_t>();
  a.height = j.at("height").get<std::int64_t>();
  a.width = j.at("width").get<std::int64_t>();
  a.num_classes = j.at("num_classes").get<int>();
  a.final_deconv_kernel = j.value("final_deconv_kernel", std::int64_t{0});
  a.width_divisor = j.value("width_divisor", std::int64_t{1});
  return a;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParameters& params,
                     const ArchitectureConfig& arch, nlohmann::json meta) {
  meta["arch"] = arch_to_json(arch);
  io::write_archive(path, io::archive_from_parameters(params, std::move(meta)));
}

ModelParameters load_checkpoint(const std::filesystem::path& path, ArchitectureConfig* arch) {
  const auto archive = io::read_archive(path);
  if (arch) {
    if (!archive.meta.contains("arch")) throw IngestError(path.string() + ": no arch metadata");
    *arch = arch_from_json(archive.meta.at("arch"));
  }
  return io::parameters_from_archive(archive);
}

}  // namespace fedshield::model
