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
#include <string>
#include <utility>
#include <vector>

#include "fedshield/tensor.hpp"

namespace fedshield::data {

// Per-channel statistics in [0, 1] pixel units.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;
};

// Normalized images [N, C, H, W] with integer labels.
struct DatasetSplit {
  Tensor images;
  std::vector<int> labels;
  int num_classes = 0;
  std::string name;
  NormStats norm_stats;

  std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
  Shape image_shape() const { return {images.dim(1), images.dim(2), images.dim(3)}; }
  // Throws ShapeError / IngestError if any invariant is broken.
  void validate() const;
};

struct Batch {
  Tensor images;
  std::vector<int> labels;
  std::vector<std::size_t> indices;  // positions in the parent split
};

NormStats compute_norm_stats(const Tensor& unit_images);
Tensor normalize(const Tensor& unit_images, const NormStats& stats);
Tensor denormalize(const Tensor& images, const NormStats& stats);
// Lower and upper bound of the normalized image of [0, 1] per channel.
std::pair<std::vector<double>, std::vector<double>> normalized_bounds(const NormStats& stats);

DatasetSplit make_split(const Tensor& unit_images, std::vector<int> labels, int num_classes,
                        std::string name, const NormStats& stats);
DatasetSplit subset(const DatasetSplit& split, const std::vector<std::size_t>& indices,
                    std::string name);

struct LoadOptions {
  std::size_t max_train = 0;  // 0 keeps every record
  std::size_t max_test = 0;
  std::uint64_t subsample_seed = 0;
};

struct CifarSplits {
  DatasetSplit train;
  DatasetSplit test;
};

// CIFAR-10 binary version: data_batch_{1..5}.bin and test_batch.bin under
// `root` or `root/cifar-10-batches-bin`. If a SHA256SUMS file sits beside
// them, every listed file is verified.
CifarSplits load_cifar10(const std::filesystem::path& root, const LoadOptions& options = {});

struct BloodMnistSplits {
  DatasetSplit train;
  DatasetSplit val;
  DatasetSplit test;
};

inline constexpr int kBloodMnistClasses = 8;

// MedMNIST archive: `root` is the .npz itself or a directory holding
// bloodmnist.npz.
BloodMnistSplits load_bloodmnist(const std::filesystem::path& root,
                                 const LoadOptions& options = {});

struct SyntheticSpec {
  std::int64_t n = 0;
  std::int64_t channels = 3;
  std::int64_t height = 16;
  std::int64_t width = 16;
  int num_classes = 2;
  std::uint64_t seed = 0;
};

// Class-conditional Gaussian-blob images. Class prototypes depend only on
// (seed, shape, num_classes); samples are drawn after them.
DatasetSplit make_synthetic(const SyntheticSpec& spec);

struct SyntheticSplits {
  DatasetSplit train;
  DatasetSplit test;
};
// Train and test drawn from the same prototypes; test uses train stats.
SyntheticSplits make_synthetic_pair(const SyntheticSpec& spec, std::int64_t n_test);

// Writes a MedMNIST-layout archive (uint8 [N, H, W, 3] images, [N, 1]
// labels) of synthetic blobs, for runs without the real BloodMNIST file.
void write_synthetic_bloodmnist(const std::filesystem::path& path, std::int64_t n_train,
                                std::int64_t n_val, std::int64_t n_test, std::uint64_t seed,
                                std::int64_t side = 28);

// Batches for one epoch. The order is a pure function of (seed, epoch).
std::vector<std::vector<std::size_t>> batch_indices(std::int64_t n, std::int64_t batch_size,
                                                    std::uint64_t seed, std::uint64_t epoch,
                                                    bool shuffle);
Batch make_batch(const DatasetSplit& split, const std::vector<std::size_t>& indices);
std::vector<Batch> batch_iter(const DatasetSplit& split, std::int64_t batch_size,
                              std::uint64_t seed, bool shuffle, std::uint64_t epoch = 0);

}  // namespace fedshield::data
