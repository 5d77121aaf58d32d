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

#include "fedshield/rng.hpp"

namespace fedshield {

Tensor randn(const Shape& shape, Rng& rng, double mean, double stddev) {
  Tensor out(shape);
  std::normal_distribution<double> dist(mean, stddev);
  for (auto& v : out.values()) v = dist(rng);
  return out;
}

Tensor rand_uniform(const Shape& shape, Rng& rng, double lo, double hi) {
  Tensor out(shape);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : out.values()) v = dist(rng);
  return out;
}

}  // namespace fedshield
