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
#include <map>
#include <string>
#include <vector>

#include "fedshield/tensor.hpp"

namespace fedshield::io {

// One array from a .npy payload. `descr` is the numpy dtype string, e.g. "|u1".
struct NpyArray {
  std::string descr;
  Shape shape;
  std::vector<std::uint8_t> bytes;  // C-order element data

  std::size_t element_size() const;
  // Converts any supported integer/float dtype to doubles.
  std::vector<double> to_doubles() const;
};

NpyArray parse_npy(const std::vector<std::uint8_t>& blob);
std::vector<std::uint8_t> serialize_npy(const NpyArray& array);

NpyArray make_npy_u8(Shape shape, std::vector<std::uint8_t> values);

// Reads every member of a .npz (zip of .npy files, stored or deflated,
// zip64 extra fields accepted). Keys drop the ".npy" suffix.
std::map<std::string, NpyArray> read_npz(const std::filesystem::path& path);
void write_npz(const std::filesystem::path& path, const std::map<std::string, NpyArray>& arrays,
               bool compress = true);

}  // namespace fedshield::io
