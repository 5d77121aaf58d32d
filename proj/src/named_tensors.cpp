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

#include "fedshield/named_tensors.hpp"

#include "fedshield/errors.hpp"

namespace fedshield {

void NamedTensors::set(const std::string& name, Tensor value) {
  auto it = index_.find(name);
  if (it != index_.end()) {
    entries_[it->second].second = std::move(value);
    return;
  }
  index_.emplace(name, entries_.size());
  entries_.emplace_back(name, std::move(value));
}

void NamedTensors::accumulate(const std::string& name, const Tensor& value) {
  if (Tensor* existing = find(name)) {
    *existing += value;
  } else {
    set(name, value);
  }
}

const Tensor& NamedTensors::at(const std::string& name) const {
  const Tensor* t = find(name);
  if (!t) throw Error("unknown tensor name '" + name + "'");
  return *t;
}

Tensor& NamedTensors::at(const std::string& name) {
  Tensor* t = find(name);
  if (!t) throw Error("unknown tensor name '" + name + "'");
  return *t;
}

const Tensor* NamedTensors::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &entries_[it->second].second;
}

Tensor* NamedTensors::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &entries_[it->second].second;
}

std::vector<std::string> NamedTensors::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

std::size_t NamedTensors::numel() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.size();
  return n;
}

void require_same_layout(const NamedTensors& a, const NamedTensors& b, const char* what) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(what) + ": tensor count mismatch (" + std::to_string(a.size()) +
                     " vs " + std::to_string(b.size()) + ")");
  }
  for (const auto& [name, t] : a) {
    const Tensor* other = b.find(name);
    if (!other) throw ShapeError(std::string(what) + ": missing tensor '" + name + "'");
    if (other->shape() != t.shape()) {
      throw ShapeError(std::string(what) + ": shape mismatch for '" + name + "'");
    }
  }
}

double dot(const NamedTensors& a, const NamedTensors& b) {
  require_same_layout(a, b, "dot");
  double s = 0.0;
  for (const auto& [name, t] : a) s += dot(t, b.at(name));
  return s;
}

double squared_norm(const NamedTensors& t) {
  double s = 0.0;
  for (const auto& [_, v] : t) s += squared_norm(v);
  return s;
}

const char* group_name(ParamGroup group) {
  switch (group) {
    case ParamGroup::kEncoder: return "encoder";
    case ParamGroup::kPredictor: return "predictor";
    case ParamGroup::kDecoder: return "decoder";
    case ParamGroup::kNoise: return "noise";
  }
  return "unknown";
}

ParamGroup parse_group(const std::string& name) {
  if (name == "encoder") return ParamGroup::kEncoder;
  if (name == "predictor") return ParamGroup::kPredictor;
  if (name == "decoder") return ParamGroup::kDecoder;
  if (name == "noise") return ParamGroup::kNoise;
  throw Error("unknown parameter group '" + name + "'");
}

void ModelParameters::add(const std::string& name, ParamGroup group, Tensor value) {
  if (tensors_.contains(name)) throw Error("duplicate parameter '" + name + "'");
  tensors_.set(name, std::move(value));
  groups_.emplace(name, group);
}

ParamGroup ModelParameters::group_of(const std::string& name) const {
  auto it = groups_.find(name);
  if (it == groups_.end()) throw Error("unknown parameter '" + name + "'");
  return it->second;
}

std::vector<std::string> ModelParameters::names_in(ParamGroup group) const {
  std::vector<std::string> out;
  for (const auto& [name, _] : tensors_) {
    if (groups_.at(name) == group) out.push_back(name);
  }
  return out;
}

ModelParameters ModelParameters::subset(std::initializer_list<ParamGroup> groups) const {
  ModelParameters out;
  for (const auto& [name, t] : tensors_) {
    const ParamGroup g = groups_.at(name);
    for (ParamGroup wanted : groups) {
      if (g == wanted) {
        out.add(name, g, t);
        break;
      }
    }
  }
  return out;
}

void ModelParameters::overlay(const NamedTensors& other) {
  for (const auto& [name, t] : other) {
    Tensor& mine = tensors_.at(name);
    if (mine.shape() != t.shape()) {
      throw ShapeError("overlay: shape mismatch for '" + name + "'");
    }
    mine = t;
  }
}

void ModelParameters::overlay(const ModelParameters& other) { overlay(other.tensors()); }

}  // namespace fedshield
