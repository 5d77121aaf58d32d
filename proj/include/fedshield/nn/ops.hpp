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

#include "fedshield/tensor.hpp"

// Differentiable building blocks on NCHW tensors. Backward functions
// accumulate parameter gradients into caller-owned tensors.
namespace fedshield::nn {

struct Padding2d {
  std::int64_t h = 0;
  std::int64_t w = 0;
};

std::int64_t conv_output_size(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                              std::int64_t pad);
std::int64_t conv_transpose_output_size(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                                        std::int64_t pad, std::int64_t out_pad);

// weight [O, C, k, k]; bias [O] or nullptr.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor* bias, std::int64_t stride,
              Padding2d pad);
Tensor conv2d_backward_input(const Tensor& grad_out, const Tensor& weight, const Shape& input_shape,
                             std::int64_t stride, Padding2d pad);
void conv2d_backward_params(const Tensor& grad_out, const Tensor& x, std::int64_t stride,
                            Padding2d pad, Tensor& grad_weight, Tensor* grad_bias);

// weight [C_in, C_out, k, k]; output spatial size from conv_transpose_output_size.
Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor* bias,
                        std::int64_t stride, Padding2d pad, Padding2d out_pad);
Tensor conv_transpose2d_backward_input(const Tensor& grad_out, const Tensor& weight,
                                       const Shape& input_shape, std::int64_t stride,
                                       Padding2d pad);
void conv_transpose2d_backward_params(const Tensor& grad_out, const Tensor& x, std::int64_t stride,
                                      Padding2d pad, Tensor& grad_weight, Tensor* grad_bias);

// Non-overlapping max pooling (stride = kernel, floor mode).
struct MaxPoolResult {
  Tensor output;
  std::vector<std::int64_t> argmax;  // flat input index per output element
};
MaxPoolResult maxpool2d(const Tensor& x, std::int64_t kernel);
Tensor maxpool2d_backward(const Tensor& grad_out, const std::vector<std::int64_t>& argmax,
                          const Shape& input_shape);
// Routes `values` (output-shaped) through stored argmax positions; the
// forward-mode counterpart of the pooling selection.
Tensor maxpool2d_select(const Tensor& input_like, const std::vector<std::int64_t>& argmax,
                        const Shape& output_shape);

Tensor relu(const Tensor& x);
// Multiplies `grad` by the indicator x > 0.
Tensor relu_mask(const Tensor& grad, const Tensor& x);

// x [B, in], weight [out, in], bias [out] or nullptr.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor* bias);
Tensor linear_backward_input(const Tensor& grad_out, const Tensor& weight);
void linear_backward_params(const Tensor& grad_out, const Tensor& x, Tensor& grad_weight,
                            Tensor* grad_bias);

// Training-mode batch normalization over (N, H, W) per channel.
struct BatchNormCache {
  Tensor normalized;
  std::vector<double> inv_std;
};
Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                   BatchNormCache* cache);
Tensor batchnorm2d_backward(const Tensor& grad_out, const Tensor& gamma,
                            const BatchNormCache& cache, Tensor& grad_gamma, Tensor& grad_beta);

}  // namespace fedshield::nn
