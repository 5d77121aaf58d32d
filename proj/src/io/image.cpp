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

#include "fedshield/io/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "fedshield/errors.hpp"

namespace fedshield::io {

RgbImage make_grid(const std::vector<Tensor>& rows, std::int64_t padding) {
  if (rows.empty()) throw Error("make_grid: no rows");
  const Shape& s = rows.front().shape();
  if (s.size() != 4) throw ShapeError("make_grid: expected [B, C, H, W]");
  const auto C = s[1], H = s[2], W = s[3];
  std::int64_t cols = 0;
  for (const auto& r : rows) {
    if (r.rank() != 4 || r.dim(1) != C || r.dim(2) != H || r.dim(3) != W) {
      throw ShapeError("make_grid: rows disagree in image shape");
    }
    cols = std::max(cols, r.dim(0));
  }
  RgbImage img;
  img.height = static_cast<std::int64_t>(rows.size()) * (H + padding) + padding;
  img.width = cols * (W + padding) + padding;
  img.pixels.assign(static_cast<std::size_t>(img.height * img.width * 3), 255);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::int64_t b = 0; b < rows[r].dim(0); ++b) {
      const auto top = padding + static_cast<std::int64_t>(r) * (H + padding);
      const auto left = padding + b * (W + padding);
      for (std::int64_t y = 0; y < H; ++y) {
        for (std::int64_t x = 0; x < W; ++x) {
          for (std::int64_t ch = 0; ch < 3; ++ch) {
            const double v = rows[r].at(b, C == 1 ? 0 : std::min(ch, C - 1), y, x);
            const double clamped = std::clamp(v, 0.0, 1.0);
            img.pixels[static_cast<std::size_t>(((top + y) * img.width + left + x) * 3 + ch)] =
                static_cast<std::uint8_t>(std::lround(clamped * 255.0));
          }
        }
      }
    }
  }
  return img;
}

void write_ppm(const std::filesystem::path& path, const RgbImage& image) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(path.string() + ": cannot open for writing");
  os << "P6\n" << image.width << " " << image.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(image.pixels.data()),
           static_cast<std::streamsize>(image.pixels.size()));
}

}  // namespace fedshield::io
