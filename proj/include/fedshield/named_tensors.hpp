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
#include <unordered_map>
#include <utility>
#include <vector>

#include "fedshield/tensor.hpp"

namespace fedshield {

// Insertion-ordered map from parameter name to tensor. Iteration order is
// stable, which keeps flattened views (cosine distances, checkpoints)
// reproducible.
class NamedTensors {
 public:
  using Entry = std::pair<std::string, Tensor>;

  void set(const std::string& name, Tensor value);
  // Adds `value` into an existing entry or inserts it.
  void accumulate(const std::string& name, const Tensor& value);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  const Tensor* find(const std::string& name) const;
  Tensor* find(const std::string& name);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::vector<std::string> names() const;
  std::size_t numel() const;

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  bool operator==(const NamedTensors& other) const { return entries_ == other.entries_; }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Inner product over the concatenation of all tensors; names must match.
double dot(const NamedTensors& a, const NamedTensors& b);
double squared_norm(const NamedTensors& t);
// Throws ShapeError when name sets or shapes disagree.
void require_same_layout(const NamedTensors& a, const NamedTensors& b, const char* what);

enum class ParamGroup { kEncoder, kPredictor, kDecoder, kNoise };

const char* group_name(ParamGroup group);
ParamGroup parse_group(const std::string& name);

// Named parameters partitioned into groups.
class ModelParameters {
 public:
  void add(const std::string& name, ParamGroup group, Tensor value);

  const NamedTensors& tensors() const { return tensors_; }
  NamedTensors& tensors() { return tensors_; }
  const Tensor& at(const std::string& name) const { return tensors_.at(name); }
  Tensor& at(const std::string& name) { return tensors_.at(name); }
  bool contains(const std::string& name) const { return tensors_.contains(name); }
  ParamGroup group_of(const std::string& name) const;
  std::size_t size() const { return tensors_.size(); }

  std::vector<std::string> names_in(ParamGroup group) const;
  ModelParameters subset(std::initializer_list<ParamGroup> groups) const;

  // Overwrites entries whose names appear in `other` (shapes must agree).
  void overlay(const ModelParameters& other);
  void overlay(const NamedTensors& other);

  bool operator==(const ModelParameters& other) const = default;

 private:
  NamedTensors tensors_;
  std::unordered_map<std::string, ParamGroup> groups_;
};

}  // namespace fedshield
