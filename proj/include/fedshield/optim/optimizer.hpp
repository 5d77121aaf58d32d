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

#include <functional>
#include <string>
#include <unordered_map>

#include "fedshield/named_tensors.hpp"

namespace fedshield::optim {

enum class OptimizerKind { kSgd, kAdam };

const char* optimizer_name(OptimizerKind kind);
OptimizerKind parse_optimizer(const std::string& name);

struct AdamMoments {
  Tensor m;
  Tensor v;
  std::int64_t steps = 0;
};

// Plain SGD or Adam with per-parameter state keyed by name. Only parameters
// present in the gradient map are touched.
class Optimizer {
 public:
  using Filter = std::function<bool(const std::string&)>;

  Optimizer(OptimizerKind kind, double lr, double beta1 = 0.9, double beta2 = 0.999,
            double eps = 1e-8);

  OptimizerKind kind() const { return kind_; }
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

  // Applies one update to every parameter in `grads` accepted by `trainable`
  // (all when empty).
  void step(NamedTensors& params, const NamedTensors& grads, const Filter& trainable = {});
  void reset() { state_.clear(); }

 private:
  OptimizerKind kind_;
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  std::unordered_map<std::string, AdamMoments> state_;
};

}  // namespace fedshield::optim
