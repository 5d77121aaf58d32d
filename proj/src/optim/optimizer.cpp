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

#include "fedshield/optim/optimizer.hpp"

#include <cmath>

#include "fedshield/errors.hpp"

namespace fedshield::optim {

const char* optimizer_name(OptimizerKind kind) {
  return kind == OptimizerKind::kSgd ? "sgd" : "adam";
}

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  throw Error("unknown optimizer '" + name + "'");
}

Optimizer::Optimizer(OptimizerKind kind, double lr, double beta1, double beta2, double eps)
    : kind_(kind), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (!(lr >= 0.0)) throw Error("optimizer: learning rate must be non-negative");
}

void Optimizer::step(NamedTensors& params, const NamedTensors& grads, const Filter& trainable) {
  for (const auto& [name, g] : grads) {
    if (trainable && !trainable(name)) continue;
    Tensor* p = params.find(name);
    if (!p) throw Error("optimizer: gradient for unknown parameter '" + name + "'");
    require_same_shape(*p, g, name.c_str());
    if (kind_ == OptimizerKind::kSgd) {
      p->add_scaled(g, -lr_);
      continue;
    }
    auto& s = state_[name];
    if (s.steps == 0) {
      s.m = Tensor::zeros_like(g);
      s.v = Tensor::zeros_like(g);
    }
    ++s.steps;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(s.steps));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(s.steps));
    const double step_size = lr_ / bc1;
    const double bc2_sqrt = std::sqrt(bc2);
    double* pm = s.m.data();
    double* pv = s.v.data();
    double* pp = p->data();
    const double* pg = g.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      pm[i] = beta1_ * pm[i] + (1.0 - beta1_) * pg[i];
      pv[i] = beta2_ * pv[i] + (1.0 - beta2_) * pg[i] * pg[i];
      pp[i] -= step_size * pm[i] / (std::sqrt(pv[i]) / bc2_sqrt + eps_);
    }
  }
}

}  // namespace fedshield::optim
