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
#include <vector>

#include <json.hpp>

#include "fedshield/named_tensors.hpp"
#include "fedshield/nn/sequential.hpp"
#include "fedshield/rng.hpp"

namespace fedshield::model {

struct ArchitectureConfig {
  std::int64_t channels = 3;
  std::int64_t height = 32;
  std::int64_t width = 32;
  int num_classes = 10;
  // 0 selects 2 for 32x32 inputs and 4 otherwise.
  std::int64_t final_deconv_kernel = 0;
  // Divides every hidden channel count; 1 is the reference width.
  std::int64_t width_divisor = 1;

  Shape input_shape() const { return {channels, height, width}; }
  std::int64_t resolved_final_kernel() const;
  std::int64_t hidden(std::int64_t channels_at_full_width) const;
};

enum class NoiseMode { kFixed, kLearnable };

// Gaussian latent perturbation z ~ N(mu, sigma^2). mu and sigma hold either a
// single value broadcast over the latent or one value per latent element.
struct NoiseSpec {
  NoiseMode mode = NoiseMode::kFixed;
  std::vector<double> mu{0.0};
  std::vector<double> sigma{0.1};
  double init_mu = 0.0;
  double init_sigma = 0.1;

  static NoiseSpec fixed(double mu, double sigma);
  static NoiseSpec learnable(double mu0, double sigma0, std::int64_t latent_size);

  // Throws Error unless sigma > 0 and lengths are 1 or latent_size (learnable
  // specs must be per element).
  void validate(std::int64_t latent_size) const;
};

const char* noise_mode_name(NoiseMode mode);
NoiseMode parse_noise_mode(const std::string& name);

double softplus(double x);
double inverse_softplus(double y);
double sigmoid(double x);

inline constexpr const char* kNoiseMu = "noise.mu";
inline constexpr const char* kNoiseRho = "noise.rho";

// Stores mu as-is and sigma as rho with sigma = softplus(rho).
void set_noise_parameters(ModelParameters& params, const NoiseSpec& spec);
NoiseSpec noise_spec_from_parameters(const ModelParameters& params, const NoiseSpec& like);

struct ForwardResult {
  Tensor reconstruction;  // [B, C, H, W]
  Tensor logits;          // [B, num_classes]
  Tensor latent;          // encoder output before noise
  Tensor noisy_latent;    // equals latent when noise is off
};

struct ForwardTrace {
  nn::SequentialTrace encoder;
  nn::SequentialTrace predictor;
  nn::SequentialTrace decoder;
  Tensor epsilon;  // standard-normal draw; empty when noise is off
  bool ran_decoder = false;
};

struct BackwardRequest {
  const Tensor* grad_reconstruction = nullptr;
  const Tensor* grad_logits = nullptr;
  // Extra gradient arriving at the pre-noise latent (e.g. from HSIC terms).
  const Tensor* grad_latent = nullptr;
  // Stop before the encoder; only decoder/predictor/noise gradients.
  bool stop_at_latent = false;
};

// Encoder -> latent noise -> {predictor, decoder}.
class DefenderModel {
 public:
  explicit DefenderModel(ArchitectureConfig arch);

  const ArchitectureConfig& arch() const { return arch_; }
  const nn::Sequential& encoder() const { return encoder_; }
  const nn::Sequential& predictor() const { return predictor_; }
  const nn::Sequential& decoder() const { return decoder_; }
  // Encoder followed by predictor; the attacker's view of the shared model.
  nn::Sequential classifier() const;

  // [C_latent, h', w'] for a single image.
  const Shape& latent_shape() const { return latent_shape_; }
  std::int64_t latent_size() const { return shape_numel(latent_shape_); }
  std::int64_t predictor_features() const { return predictor_features_; }

  // Fresh encoder/predictor/decoder weights plus the noise parameters of `noise`.
  ModelParameters init_parameters(std::uint64_t seed, const NoiseSpec& noise) const;

  // `epsilon` enables noise (shape [B, latent...]); null runs noise-free.
  // With want_reconstruction=false the decoder is skipped.
  ForwardResult forward(const Tensor& x, const ModelParameters& params, const Tensor* epsilon,
                        ForwardTrace* trace, bool want_reconstruction = true) const;

  // Accumulates gradients into `grads` for every parameter the requested
  // outputs depend on; untouched parameters receive no entry.
  void backward(const ForwardTrace& trace, const ModelParameters& params,
                const BackwardRequest& request, NamedTensors& grads) const;

  // Argmax of logits for every image, in batches, with noise drawn from `rng`
  // when non-null.
  std::vector<int> predict(const Tensor& images, const ModelParameters& params, Rng* noise_rng,
                           std::int64_t batch_size = 256) const;

  Tensor sample_epsilon(std::int64_t batch, Rng& rng) const;

 private:
  ArchitectureConfig arch_;
  nn::Sequential encoder_;
  nn::Sequential predictor_;
  nn::Sequential decoder_;
  Shape latent_shape_;
  std::int64_t predictor_features_ = 0;
};

// Encoder and predictor groups: what a client sends to the server.
ModelParameters shared_parameters(const ModelParameters& params);
// `local` with every shared entry replaced by `shared`.
ModelParameters merge_parameters(const ModelParameters& shared, const ModelParameters& local);

nlohmann::json arch_to_json(const ArchitectureConfig& arch);
ArchitectureConfig arch_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path, const ModelParameters& params,
                     const ArchitectureConfig& arch, nlohmann::json meta = nlohmann::json::object());
ModelParameters load_checkpoint(const std::filesystem::path& path,
                                ArchitectureConfig* arch = nullptr);

}  // namespace fedshield::model
