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

#include "fedshield/nn/sequential.hpp"

#include <cmath>

#include "fedshield/errors.hpp"

namespace fedshield::nn {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::string weight_name(const std::string& layer) { return layer + ".weight"; }
std::string bias_name(const std::string& layer) { return layer + ".bias"; }

Tensor& grad_slot(NamedTensors& grads, const std::string& name, const Tensor& like) {
  if (Tensor* existing = grads.find(name)) return *existing;
  grads.set(name, Tensor::zeros_like(like));
  return grads.at(name);
}

void require_channels(const Shape& s, std::int64_t expected, const char* what) {
  if (s.size() != 4 || s[1] != expected) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(expected) +
                     " input channels, got shape " + shape_string(s));
  }
}

Tensor flatten(const Tensor& x) {
  const auto B = x.dim(0);
  return x.reshaped({B, static_cast<std::int64_t>(x.size()) / B});
}

}  // namespace

void Sequential::extend(const Sequential& other) {
  layers_.insert(layers_.end(), other.layers_.begin(), other.layers_.end());
}

Shape Sequential::output_shape(const Shape& input_shape) const {
  Shape s = input_shape;
  auto positive = [&](const char* what) {
    for (auto d : s) {
      if (d <= 0) {
        throw ConstructionError(std::string(what) + " yields non-positive shape " +
                                shape_string(s));
      }
    }
  };
  for (const auto& layer : layers_) {
    std::visit(
        Overloaded{
            [&](const Conv2dLayer& l) {
              require_channels(s, l.in_channels, l.name.c_str());
              s = {s[0], l.out_channels, conv_output_size(s[2], l.kernel, l.stride, l.pad.h),
                   conv_output_size(s[3], l.kernel, l.stride, l.pad.w)};
              positive(l.name.c_str());
            },
            [&](const ConvTranspose2dLayer& l) {
              require_channels(s, l.in_channels, l.name.c_str());
              s = {s[0], l.out_channels,
                   conv_transpose_output_size(s[2], l.kernel, l.stride, l.pad.h, l.out_pad.h),
                   conv_transpose_output_size(s[3], l.kernel, l.stride, l.pad.w, l.out_pad.w)};
              positive(l.name.c_str());
            },
            [&](const BatchNorm2dLayer& l) { require_channels(s, l.channels, l.name.c_str()); },
            [&](const ReluLayer&) {},
            [&](const MaxPool2dLayer& l) {
              if (s.size() != 4) throw ConstructionError("maxpool expects rank-4 input");
              s = {s[0], s[1], s[2] / l.kernel, s[3] / l.kernel};
              positive("maxpool");
            },
            [&](const FlattenLayer&) {
              std::int64_t n = 1;
              for (std::size_t i = 1; i < s.size(); ++i) n *= s[i];
              s = {s[0], n};
            },
            [&](const LinearLayer& l) {
              if (s.size() != 2 || s[1] != l.in_features) {
                throw ConstructionError(l.name + ": expected " + std::to_string(l.in_features) +
                                        " input features, got shape " + shape_string(s));
              }
              s = {s[0], l.out_features};
            },
        },
        layer);
  }
  return s;
}

std::vector<ParamSpec> Sequential::parameters() const {
  using Init = ParamSpec::Init;
  std::vector<ParamSpec> out;
  for (const auto& layer : layers_) {
    std::visit(Overloaded{
                   [&](const Conv2dLayer& l) {
                     const auto fan_in = l.in_channels * l.kernel * l.kernel;
                     out.push_back({weight_name(l.name),
                                    {l.out_channels, l.in_channels, l.kernel, l.kernel},
                                    Init::kUniformFanIn,
                                    fan_in});
                     out.push_back({bias_name(l.name), {l.out_channels}, Init::kUniformFanIn,
                                    fan_in});
                   },
                   [&](const ConvTranspose2dLayer& l) {
                     const auto fan_in = l.out_channels * l.kernel * l.kernel;
                     out.push_back({weight_name(l.name),
                                    {l.in_channels, l.out_channels, l.kernel, l.kernel},
                                    Init::kUniformFanIn,
                                    fan_in});
                     out.push_back({bias_name(l.name), {l.out_channels}, Init::kUniformFanIn,
                                    fan_in});
                   },
                   [&](const BatchNorm2dLayer& l) {
                     out.push_back({weight_name(l.name), {l.channels}, Init::kOnes, 1});
                     out.push_back({bias_name(l.name), {l.channels}, Init::kZeros, 1});
                   },
                   [&](const LinearLayer& l) {
                     out.push_back({weight_name(l.name),
                                    {l.out_features, l.in_features},
                                    Init::kUniformFanIn,
                                    l.in_features});
                     out.push_back({bias_name(l.name), {l.out_features}, Init::kUniformFanIn,
                                    l.in_features});
                   },
                   [&](const auto&) {},
               },
               layer);
  }
  return out;
}

void Sequential::init_parameters(NamedTensors& out, Rng& rng) const {
  for (const auto& spec : parameters()) {
    switch (spec.init) {
      case ParamSpec::Init::kOnes:
        out.set(spec.name, Tensor(spec.shape, 1.0));
        break;
      case ParamSpec::Init::kZeros:
        out.set(spec.name, Tensor(spec.shape, 0.0));
        break;
      case ParamSpec::Init::kUniformFanIn: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
        out.set(spec.name, rand_uniform(spec.shape, rng, -bound, bound));
        break;
      }
    }
  }
}

Tensor Sequential::forward(const Tensor& x, const NamedTensors& params,
                           SequentialTrace* trace) const {
  if (trace) {
    trace->inputs.assign(layers_.size(), Tensor());
    trace->argmax.assign(layers_.size(), {});
    trace->batchnorm.assign(layers_.size(), {});
  }
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Tensor next = std::visit(
        Overloaded{
            [&](const Conv2dLayer& l) {
              require_channels(h.shape(), l.in_channels, l.name.c_str());
              return conv2d(h, params.at(weight_name(l.name)), &params.at(bias_name(l.name)),
                            l.stride, l.pad);
            },
            [&](const ConvTranspose2dLayer& l) {
              require_channels(h.shape(), l.in_channels, l.name.c_str());
              return conv_transpose2d(h, params.at(weight_name(l.name)),
                                      &params.at(bias_name(l.name)), l.stride, l.pad, l.out_pad);
            },
            [&](const BatchNorm2dLayer& l) {
              return batchnorm2d(h, params.at(weight_name(l.name)), params.at(bias_name(l.name)),
                                 l.eps, trace ? &trace->batchnorm[i] : nullptr);
            },
            [&](const ReluLayer&) { return relu(h); },
            [&](const MaxPool2dLayer& l) {
              auto r = maxpool2d(h, l.kernel);
              if (trace) trace->argmax[i] = std::move(r.argmax);
              return std::move(r.output);
            },
            [&](const FlattenLayer&) { return flatten(h); },
            [&](const LinearLayer& l) {
              return linear(h, params.at(weight_name(l.name)), &params.at(bias_name(l.name)));
            },
        },
        layers_[i]);
    if (trace) trace->inputs[i] = std::move(h);
    h = std::move(next);
  }
  return h;
}

Tensor Sequential::backward(const Tensor& grad_out, const SequentialTrace& trace,
                            const NamedTensors& params, NamedTensors* grads,
                            bool need_input_grad) const {
  Tensor g = grad_out;
  for (std::size_t idx = layers_.size(); idx-- > 0;) {
    const Tensor& in = trace.inputs[idx];
    const bool want_input = need_input_grad || idx > 0;
    g = std::visit(
        Overloaded{
            [&](const Conv2dLayer& l) {
              const Tensor& w = params.at(weight_name(l.name));
              if (grads) {
                conv2d_backward_params(g, in, l.stride, l.pad,
                                       grad_slot(*grads, weight_name(l.name), w),
                                       &grad_slot(*grads, bias_name(l.name),
                                                  params.at(bias_name(l.name))));
              }
              return want_input ? conv2d_backward_input(g, w, in.shape(), l.stride, l.pad)
                                : Tensor();
            },
            [&](const ConvTranspose2dLayer& l) {
              const Tensor& w = params.at(weight_name(l.name));
              if (grads) {
                conv_transpose2d_backward_params(
                    g, in, l.stride, l.pad, grad_slot(*grads, weight_name(l.name), w),
                    &grad_slot(*grads, bias_name(l.name), params.at(bias_name(l.name))));
              }
              return want_input
                         ? conv_transpose2d_backward_input(g, w, in.shape(), l.stride, l.pad)
                         : Tensor();
            },
            [&](const BatchNorm2dLayer& l) {
              const Tensor& gamma = params.at(weight_name(l.name));
              const Tensor& beta = params.at(bias_name(l.name));
              Tensor scratch_gamma = Tensor::zeros_like(gamma);
              Tensor scratch_beta = Tensor::zeros_like(beta);
              Tensor& gg = grads ? grad_slot(*grads, weight_name(l.name), gamma) : scratch_gamma;
              Tensor& gb = grads ? grad_slot(*grads, bias_name(l.name), beta) : scratch_beta;
              return batchnorm2d_backward(g, gamma, trace.batchnorm[idx], gg, gb);
            },
            [&](const ReluLayer&) { return relu_mask(g, in); },
            [&](const MaxPool2dLayer&) {
              return maxpool2d_backward(g, trace.argmax[idx], in.shape());
            },
            [&](const FlattenLayer&) { return g.reshaped(in.shape()); },
            [&](const LinearLayer& l) {
              const Tensor& w = params.at(weight_name(l.name));
              if (grads) {
                linear_backward_params(
                    g, in, grad_slot(*grads, weight_name(l.name), w),
                    &grad_slot(*grads, bias_name(l.name), params.at(bias_name(l.name))));
              }
              return want_input ? linear_backward_input(g, w) : Tensor();
            },
        },
        layers_[idx]);
    if (!want_input) break;
  }
  return g;
}

Dual Sequential::forward_tangent(const Tensor& x, const Tensor* x_dot, const NamedTensors& params,
                                 const NamedTensors& param_dots, TangentTrace* trace) const {
  if (trace) {
    trace->inputs.assign(layers_.size(), Tensor());
    trace->argmax.assign(layers_.size(), {});
  }
  Tensor h = x;
  Tensor h_dot = x_dot ? *x_dot : Tensor();  // empty means identically zero
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Dual next = std::visit(
        Overloaded{
            [&](const Conv2dLayer& l) {
              const Tensor& w = params.at(weight_name(l.name));
              const Tensor& b = params.at(bias_name(l.name));
              Dual d{conv2d(h, w, &b, l.stride, l.pad), Tensor()};
              const Tensor* w_dot = param_dots.find(weight_name(l.name));
              const Tensor* b_dot = param_dots.find(bias_name(l.name));
              d.tangent = Tensor::zeros_like(d.primal);
              if (!h_dot.empty()) d.tangent += conv2d(h_dot, w, nullptr, l.stride, l.pad);
              if (w_dot) d.tangent += conv2d(h, *w_dot, b_dot, l.stride, l.pad);
              else if (b_dot) d.tangent += conv2d(h, Tensor::zeros_like(w), b_dot, l.stride, l.pad);
              return d;
            },
            [&](const ReluLayer&) {
              return Dual{relu(h), h_dot.empty() ? Tensor::zeros_like(h) : relu_mask(h_dot, h)};
            },
            [&](const MaxPool2dLayer& l) {
              auto r = maxpool2d(h, l.kernel);
              Tensor t = h_dot.empty() ? Tensor::zeros_like(r.output)
                                       : maxpool2d_select(h_dot, r.argmax, r.output.shape());
              if (trace) trace->argmax[i] = std::move(r.argmax);
              return Dual{std::move(r.output), std::move(t)};
            },
            [&](const FlattenLayer&) {
              return Dual{flatten(h), h_dot.empty() ? flatten(Tensor::zeros_like(h))
                                                    : flatten(h_dot)};
            },
            [&](const LinearLayer& l) {
              const Tensor& w = params.at(weight_name(l.name));
              const Tensor& b = params.at(bias_name(l.name));
              Dual d{linear(h, w, &b), Tensor()};
              d.tangent = Tensor::zeros_like(d.primal);
              if (!h_dot.empty()) d.tangent += linear(h_dot, w, nullptr);
              const Tensor* w_dot = param_dots.find(weight_name(l.name));
              const Tensor* b_dot = param_dots.find(bias_name(l.name));
              if (w_dot) d.tangent += linear(h, *w_dot, b_dot);
              else if (b_dot) d.tangent += linear(h, Tensor::zeros_like(w), b_dot);
              return d;
            },
            [&](const auto&) -> Dual {
              throw Error("forward_tangent: layer type not supported");
            },
        },
        layers_[i]);
    if (trace) trace->inputs[i] = std::move(h);
    h = std::move(next.primal);
    h_dot = std::move(next.tangent);
  }
  return Dual{std::move(h), std::move(h_dot)};
}

Dual Sequential::backward_tangent(const Tensor& adj_y, const Tensor& adj_y_dot,
                                  const TangentTrace& trace, const NamedTensors& params,
                                  const NamedTensors& param_dots,
                                  bool need_input_tangent_adjoint) const {
  Tensor a = adj_y;
  Tensor t = adj_y_dot;
  for (std::size_t idx = layers_.size(); idx-- > 0;) {
    const Tensor& in = trace.inputs[idx];
    const bool want_t = need_input_tangent_adjoint || idx > 0;
    Dual prev = std::visit(
        Overloaded{
            [&](const Conv2dLayer& l) {
              const Tensor& w = params.at(weight_name(l.name));
              Dual d{conv2d_backward_input(a, w, in.shape(), l.stride, l.pad), Tensor()};
              if (const Tensor* w_dot = param_dots.find(weight_name(l.name))) {
                d.primal += conv2d_backward_input(t, *w_dot, in.shape(), l.stride, l.pad);
              }
              if (want_t) d.tangent = conv2d_backward_input(t, w, in.shape(), l.stride, l.pad);
              return d;
            },
            [&](const ReluLayer&) {
              return Dual{relu_mask(a, in), want_t ? relu_mask(t, in) : Tensor()};
            },
            [&](const MaxPool2dLayer&) {
              return Dual{maxpool2d_backward(a, trace.argmax[idx], in.shape()),
                          want_t ? maxpool2d_backward(t, trace.argmax[idx], in.shape())
                                 : Tensor()};
            },
            [&](const FlattenLayer&) {
              return Dual{a.reshaped(in.shape()), want_t ? t.reshaped(in.shape()) : Tensor()};
            },
            [&](const LinearLayer& l) {
              const Tensor& w = params.at(weight_name(l.name));
              Dual d{linear_backward_input(a, w), Tensor()};
              if (const Tensor* w_dot = param_dots.find(weight_name(l.name))) {
                d.primal += linear_backward_input(t, *w_dot);
              }
              if (want_t) d.tangent = linear_backward_input(t, w);
              return d;
            },
            [&](const auto&) -> Dual {
              throw Error("backward_tangent: layer type not supported");
            },
        },
        layers_[idx]);
    a = std::move(prev.primal);
    t = std::move(prev.tangent);
  }
  return Dual{std::move(a), std::move(t)};
}

}  // namespace fedshield::nn
