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
#include <vector>

#include "fedshield/tensor.hpp"

namespace fedshield::io {

struct RgbImage {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB
};

// Tiles rows of [B, C, H, W] tensors holding values in [0, 1] into one image;
// each input tensor becomes one grid row. Single-channel images are replicated.
RgbImage make_grid(const std::vector<Tensor>& rows, std::int64_t padding = 2);

// Binary PPM (P6), 8 bits per channel.
void write_ppm(const std::filesystem::path& path, const RgbImage& image);

}  // namespace fedshield::io
