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

#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "fedshield/named_tensors.hpp"
#include "fedshield/nn/ops.hpp"
#include "fedshield/rng.hpp"

namespace fedshield::nn {

struct Conv2dLayer {
  std::string name;
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  std::int64_t kernel = 3;
  std::int64_t stride = 1;
  Padding2d pad{1, 1};
};

struct ConvTranspose2dLayer {
  std::string name;
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  std::int64_t kernel = 3;
  std::int64_t stride = 1;
  Padding2d pad{0, 0};
  Padding2d out_pad{0, 0};
};

struct BatchNorm2dLayer {
  std::string name;
  std::int64_t channels = 0;
  double eps = 1e-5;
};

struct ReluLayer {};

struct MaxPool2dLayer {
  std::int64_t kernel = 3;
};

struct FlattenLayer {};

struct LinearLayer {
  std::string name;
  std::int64_t in_features = 0;
  std::int64_t out_features = 0;
};

using Layer = std::variant<Conv2dLayer, ConvTranspose2dLayer, BatchNorm2dLayer, ReluLayer,
                           MaxPool2dLayer, FlattenLayer, LinearLayer>;

struct ParamSpec {
  std::string name;
  Shape shape;
  enum class Init { kUniformFanIn, kOnes, kZeros } init = Init::kUniformFanIn;
  std::int64_t fan_in = 1;
};

// Per-layer values recorded by forward() and consumed by backward().
struct SequentialTrace {
  std::vector<Tensor> inputs;
  std::vector<std::vector<std::int64_t>> argmax;
  std::vector<BatchNormCache> batchnorm;
};

// Primal and tangent values recorded by forward_tangent().
struct TangentTrace {
  std::vector<Tensor> inputs;
  std::vector<std::vector<std::int64_t>> argmax;
};

struct Dual {
  Tensor primal;
  Tensor tangent;
};

// A feed-forward chain of layers whose parameters live in an external
// NamedTensors keyed by "<layer name>.weight" / ".bias".
class Sequential {
 public:
  Sequential() = default;
  explicit Sequential(std::vector<Layer> layers) : layers_(std::move(layers)) {}

  void append(Layer layer) { layers_.push_back(std::move(layer)); }
  void extend(const Sequential& other);
  const std::vector<Layer>& layers() const { return layers_; }
  std::size_t size() const { return layers_.size(); }

  // Throws ConstructionError if any intermediate dimension is non-positive.
  Shape output_shape(const Shape& input_shape) const;
  std::vector<ParamSpec> parameters() const;
  // Fills `out` with freshly initialized tensors for every parameter.
  void init_parameters(NamedTensors& out, Rng& rng) const;

  Tensor forward(const Tensor& x, const NamedTensors& params, SequentialTrace* trace) const;

  // Returns the input gradient (empty tensor when need_input_grad is false).
  // Parameter gradients are accumulated into `grads` when non-null.
  Tensor backward(const Tensor& grad_out, const SequentialTrace& trace, const NamedTensors& params,
                  NamedTensors* grads, bool need_input_grad = true) const;

  // Forward mode along a parameter direction: returns (y, dy) where dy is the
  // derivative of y along (x_dot, param_dots). Missing param_dots entries are
  // zero; x_dot may be null. BatchNorm and transposed convs are unsupported.
  Dual forward_tangent(const Tensor& x, const Tensor* x_dot, const NamedTensors& params,
                       const NamedTensors& param_dots, TangentTrace* trace) const;

  // Reverse pass through forward_tangent: maps adjoints of (y, dy) to the
  // adjoint of x (first) and of x_dot (second, empty unless requested).
  Dual backward_tangent(const Tensor& adj_y, const Tensor& adj_y_dot, const TangentTrace& trace,
                        const NamedTensors& params, const NamedTensors& param_dots,
                        bool need_input_tangent_adjoint = false) const;

 private:
  std::vector<Layer> layers_;
};

}  // namespace fedshield::nn
