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

#include "fedshield/data/dataset.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fedshield/errors.hpp"
#include "fedshield/io/npz.hpp"
#include "fedshield/rng.hpp"

namespace fedshield::data {
namespace {

constexpr std::int64_t kCifarRecordBytes = 3073;
constexpr std::int64_t kCifarRecordsPerFile = 10000;
constexpr std::int64_t kCifarSide = 32;

std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(idx[i - 1], idx[pick(rng)]);
  }
  return idx;
}

// Sorted random subset of size `keep` (all indices when keep == 0 or >= n).
std::vector<std::size_t> choose_records(std::size_t n, std::size_t keep, std::uint64_t seed,
                                        std::uint64_t tag) {
  if (keep == 0 || keep >= n) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  Rng rng = make_rng(seed, {kStreamPartition, tag});
  auto perm = permutation(n, rng);
  perm.resize(keep);
  std::sort(perm.begin(), perm.end());
  return perm;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError(path.string() + ": file missing or unreadable");
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
}

std::string sha256_hex(const std::vector<std::uint8_t>& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw IngestError("sha256 computation failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> read_checksums(const std::filesystem::path& p) {
  std::vector<std::pair<std::string, std::string>> out;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream is(line);
    std::string hash, file;
    if (!(is >> hash >> file)) continue;
    if (!file.empty() && file.front() == '*') file.erase(0, 1);
    std::transform(hash.begin(), hash.end(), hash.begin(), ::tolower);
    out.emplace_back(file, hash);
  }
  return out;
}

struct CifarFile {
  std::filesystem::path path;
  std::vector<std::uint8_t> bytes;
};

CifarFile read_cifar_file(const std::filesystem::path& dir, const std::string& name) {
  const auto path = dir / name;
  if (!std::filesystem::exists(path)) throw IngestError(path.string() + ": file missing");
  CifarFile f{path, read_bytes(path)};
  const auto size = static_cast<std::int64_t>(f.bytes.size());
  if (size == 0) throw IngestError(path.string() + ": file contains no records");
  if (size % kCifarRecordBytes != 0 || size / kCifarRecordBytes != kCifarRecordsPerFile) {
    throw IngestError(path.string() + ": truncated; expected " +
                      std::to_string(kCifarRecordsPerFile) + " records of " +
                      std::to_string(kCifarRecordBytes) + " bytes, found " +
                      std::to_string(size) + " bytes");
  }
  return f;
}

// Converts selected global record indices across `files` into [0,1] images.
std::pair<Tensor, std::vector<int>> decode_cifar(const std::vector<CifarFile>& files,
                                                 const std::vector<std::size_t>& records) {
  const std::int64_t pixels = 3 * kCifarSide * kCifarSide;
  Tensor unit({static_cast<std::int64_t>(records.size()), 3, kCifarSide, kCifarSide});
  std::vector<int> labels(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& f = files[records[i] / kCifarRecordsPerFile];
    const std::uint8_t* rec =
        f.bytes.data() + (records[i] % kCifarRecordsPerFile) * kCifarRecordBytes;
    if (rec[0] > 9) {
      throw IngestError(f.path.string() + ": label " + std::to_string(rec[0]) + " out of range");
    }
    labels[i] = rec[0];
    double* dst = unit.data() + i * pixels;
    for (std::int64_t p = 0; p < pixels; ++p) dst[p] = rec[1 + p] / 255.0;
  }
  return {std::move(unit), std::move(labels)};
}

// MedMNIST stores [N, H, W, C] (or [N, H, W]) uint8; returns [N, C, H, W] in [0,1].
Tensor hwc_to_unit_chw(const io::NpyArray& arr, const std::vector<std::size_t>& keep,
                       const std::string& key) {
  if (arr.shape.size() != 3 && arr.shape.size() != 4) {
    throw IngestError(key + ": expected [N, H, W, C] images, got " + shape_string(arr.shape));
  }
  const auto values = arr.to_doubles();
  const auto H = arr.shape[1], W = arr.shape[2], C = arr.shape.size() == 4 ? arr.shape[3] : 1;
  Tensor out({static_cast<std::int64_t>(keep.size()), C, H, W});
  for (std::size_t i = 0; i < keep.size(); ++i) {
    const double* src = values.data() + keep[i] * H * W * C;
    for (std::int64_t y = 0; y < H; ++y) {
      for (std::int64_t x = 0; x < W; ++x) {
        for (std::int64_t c = 0; c < C; ++c) {
          out.at(static_cast<std::int64_t>(i), c, y, x) = src[(y * W + x) * C + c] / 255.0;
        }
      }
    }
  }
  return out;
}

struct SyntheticDraw {
  Tensor unit;
  std::vector<int> labels;
};

struct Blob {
  double cy, cx, radius;
  std::vector<double> amplitude;
};

struct ClassPrototype {
  std::vector<double> background;
  std::vector<Blob> blobs;
};

std::vector<ClassPrototype> synthetic_prototypes(const SyntheticSpec& spec) {
  Rng rng = make_rng(spec.seed, {kStreamSynthetic, 0});
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double side = static_cast<double>(std::min(spec.height, spec.width));
  std::vector<ClassPrototype> protos(static_cast<std::size_t>(spec.num_classes));
  for (auto& p : protos) {
    for (std::int64_t c = 0; c < spec.channels; ++c) p.background.push_back(0.3 + 0.4 * u01(rng));
    for (int b = 0; b < 2; ++b) {
      Blob blob{(0.15 + 0.7 * u01(rng)) * static_cast<double>(spec.height),
                (0.15 + 0.7 * u01(rng)) * static_cast<double>(spec.width),
                (0.12 + 0.13 * u01(rng)) * side,
                {}};
      for (std::int64_t c = 0; c < spec.channels; ++c) blob.amplitude.push_back(0.9 * u01(rng) - 0.45);
      p.blobs.push_back(std::move(blob));
    }
  }
  return protos;
}

std::vector<int> balanced_labels(std::int64_t n, int k, Rng& rng) {
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % k);
  const auto perm = permutation(labels.size(), rng);
  std::vector<int> shuffled(labels.size());
  for (std::size_t i = 0; i < perm.size(); ++i) shuffled[i] = labels[perm[i]];
  return shuffled;
}

SyntheticDraw draw_synthetic(const SyntheticSpec& spec, const std::vector<ClassPrototype>& protos,
                             std::int64_t n, Rng& rng) {
  SyntheticDraw d{Tensor({n, spec.channels, spec.height, spec.width}),
                  balanced_labels(n, spec.num_classes, rng)};
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double jitter = 0.04 * static_cast<double>(std::min(spec.height, spec.width));
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& proto = protos[static_cast<std::size_t>(d.labels[i])];
    std::vector<Blob> blobs = proto.blobs;
    for (auto& b : blobs) {
      b.cy += jitter * gauss(rng);
      b.cx += jitter * gauss(rng);
      const double scale = 1.0 + 0.1 * gauss(rng);
      for (auto& a : b.amplitude) a *= scale;
    }
    for (std::int64_t c = 0; c < spec.channels; ++c) {
      for (std::int64_t y = 0; y < spec.height; ++y) {
        for (std::int64_t x = 0; x < spec.width; ++x) {
          double v = proto.background[c];
          for (const auto& b : blobs) {
            const double dy = static_cast<double>(y) - b.cy, dx = static_cast<double>(x) - b.cx;
            v += b.amplitude[c] * std::exp(-(dy * dy + dx * dx) / (2.0 * b.radius * b.radius));
          }
          v += 0.03 * gauss(rng);
          d.unit.at(i, c, y, x) = std::clamp(v, 0.0, 1.0);
        }
      }
    }
  }
  return d;
}

void validate_synthetic(const SyntheticSpec& spec) {
  if (spec.n < 1 || spec.channels < 1 || spec.height < 1 || spec.width < 1) {
    throw Error("make_synthetic: all dimensions must be at least 1");
  }
  if (spec.num_classes < 2) throw Error("make_synthetic: num_classes must be at least 2");
  if (spec.num_classes > spec.n) {
    throw Error("make_synthetic: num_classes (" + std::to_string(spec.num_classes) +
                ") exceeds N (" + std::to_string(spec.n) + ")");
  }
}

}  // namespace

void DatasetSplit::validate() const {
  if (images.rank() != 4) throw ShapeError(name + ": images must be [N, C, H, W]");
  if (images.dim(0) != size()) throw ShapeError(name + ": images and labels differ in length");
  if (num_classes < 1) throw IngestError(name + ": num_classes must be positive");
  for (int y : labels) {
    if (y < 0 || y >= num_classes) {
      throw IngestError(name + ": label " + std::to_string(y) + " outside [0, " +
                        std::to_string(num_classes) + ")");
    }
  }
  if (norm_stats.mean.size() != static_cast<std::size_t>(images.dim(1)) ||
      norm_stats.std.size() != norm_stats.mean.size()) {
    throw IngestError(name + ": normalization stats do not match channel count");
  }
  for (double s : norm_stats.std) {
    if (!(s > 0.0)) throw IngestError(name + ": normalization std must be positive");
  }
}

NormStats compute_norm_stats(const Tensor& unit_images) {
  const auto N = unit_images.dim(0), C = unit_images.dim(1);
  const auto HW = unit_images.dim(2) * unit_images.dim(3);
  NormStats s{std::vector<double>(C, 0.0), std::vector<double>(C, 0.0)};
  const double count = static_cast<double>(N * HW);
  for (std::int64_t c = 0; c < C; ++c) {
    double sum = 0.0;
    for (std::int64_t n = 0; n < N; ++n) {
      const double* p = unit_images.data() + (n * C + c) * HW;
      for (std::int64_t i = 0; i < HW; ++i) sum += p[i];
    }
    const double mean = sum / count;
    double var = 0.0;
    for (std::int64_t n = 0; n < N; ++n) {
      const double* p = unit_images.data() + (n * C + c) * HW;
      for (std::int64_t i = 0; i < HW; ++i) var += (p[i] - mean) * (p[i] - mean);
    }
    s.mean[c] = mean;
    // A flat channel would make the std zero; fall back to unit scale.
    const double std = std::sqrt(var / count);
    s.std[c] = std > 1e-12 ? std : 1.0;
  }
  return s;
}

Tensor normalize(const Tensor& unit_images, const NormStats& stats) {
  Tensor out = unit_images;
  const auto N = out.dim(0), C = out.dim(1), HW = out.dim(2) * out.dim(3);
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t c = 0; c < C; ++c) {
      double* p = out.data() + (n * C + c) * HW;
      for (std::int64_t i = 0; i < HW; ++i) p[i] = (p[i] - stats.mean[c]) / stats.std[c];
    }
  }
  return out;
}

Tensor denormalize(const Tensor& images, const NormStats& stats) {
  Tensor out = images;
  const auto N = out.dim(0), C = out.dim(1), HW = out.dim(2) * out.dim(3);
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t c = 0; c < C; ++c) {
      double* p = out.data() + (n * C + c) * HW;
      for (std::int64_t i = 0; i < HW; ++i) p[i] = p[i] * stats.std[c] + stats.mean[c];
    }
  }
  return out;
}

std::pair<std::vector<double>, std::vector<double>> normalized_bounds(const NormStats& stats) {
  std::vector<double> lo, hi;
  for (std::size_t c = 0; c < stats.mean.size(); ++c) {
    lo.push_back((0.0 - stats.mean[c]) / stats.std[c]);
    hi.push_back((1.0 - stats.mean[c]) / stats.std[c]);
  }
  return {lo, hi};
}

DatasetSplit make_split(const Tensor& unit_images, std::vector<int> labels, int num_classes,
                        std::string name, const NormStats& stats) {
  DatasetSplit s{normalize(unit_images, stats), std::move(labels), num_classes, std::move(name),
                 stats};
  s.validate();
  return s;
}

DatasetSplit subset(const DatasetSplit& split, const std::vector<std::size_t>& indices,
                    std::string name) {
  DatasetSplit s;
  s.images = gather_rows(split.images, indices);
  for (auto i : indices) s.labels.push_back(split.labels.at(i));
  s.num_classes = split.num_classes;
  s.name = std::move(name);
  s.norm_stats = split.norm_stats;
  return s;
}

CifarSplits load_cifar10(const std::filesystem::path& root, const LoadOptions& options) {
  std::filesystem::path dir = root;
  if (!std::filesystem::exists(dir / "data_batch_1.bin") &&
      std::filesystem::exists(root / "cifar-10-batches-bin")) {
    dir = root / "cifar-10-batches-bin";
  }
  std::vector<CifarFile> train_files;
  for (int i = 1; i <= 5; ++i) {
    train_files.push_back(read_cifar_file(dir, "data_batch_" + std::to_string(i) + ".bin"));
  }
  std::vector<CifarFile> test_files;
  test_files.push_back(read_cifar_file(dir, "test_batch.bin"));

  const auto sums_path = dir / "SHA256SUMS";
  if (std::filesystem::exists(sums_path)) {
    for (const auto& [file, expected] : read_checksums(sums_path)) {
      const std::vector<std::uint8_t>* bytes = nullptr;
      for (const auto* group : {&train_files, &test_files}) {
        for (const auto& f : *group) {
          if (f.path.filename() == file) bytes = &f.bytes;
        }
      }
      if (!bytes) continue;
      if (sha256_hex(*bytes) != expected) {
        throw IngestError((dir / file).string() + ": checksum mismatch");
      }
    }
  }

  const auto train_records = choose_records(5 * kCifarRecordsPerFile, options.max_train,
                                            options.subsample_seed, 1);
  const auto test_records =
      choose_records(kCifarRecordsPerFile, options.max_test, options.subsample_seed, 2);
  auto [train_unit, train_labels] = decode_cifar(train_files, train_records);
  auto [test_unit, test_labels] = decode_cifar(test_files, test_records);
  const NormStats stats = compute_norm_stats(train_unit);
  return {make_split(train_unit, std::move(train_labels), 10, "cifar10-train", stats),
          make_split(test_unit, std::move(test_labels), 10, "cifar10-test", stats)};
}

BloodMnistSplits load_bloodmnist(const std::filesystem::path& root, const LoadOptions& options) {
  std::filesystem::path path = root;
  if (std::filesystem::is_directory(root)) path = root / "bloodmnist.npz";
  if (!std::filesystem::exists(path)) throw IngestError(path.string() + ": archive missing");
  const auto arrays = io::read_npz(path);

  static const char* kKeys[] = {"train_images", "train_labels", "val_images",
                                "val_labels",   "test_images",  "test_labels"};
  std::vector<std::string> missing;
  for (const char* k : kKeys) {
    if (!arrays.count(k)) missing.emplace_back(k);
  }
  if (!missing.empty()) {
    std::string expected, absent;
    for (const char* k : kKeys) expected += std::string(expected.empty() ? "" : ", ") + k;
    for (const auto& k : missing) absent += (absent.empty() ? "" : ", ") + k;
    throw IngestError(path.string() + ": missing keys [" + absent + "]; expected keys [" +
                      expected + "]");
  }

  auto decode = [&](const std::string& prefix, std::size_t keep_max, std::uint64_t tag,
                    std::vector<int>& labels_out) {
    const auto& images = arrays.at(prefix + "_images");
    const auto& labels = arrays.at(prefix + "_labels");
    if (images.shape.empty() || labels.shape.empty() || images.shape[0] != labels.shape[0]) {
      throw IngestError(path.string() + ": " + prefix + " images and labels differ in length");
    }
    const auto n = static_cast<std::size_t>(images.shape[0]);
    if (n == 0) throw IngestError(path.string() + ": " + prefix + " split is empty");
    const auto keep = choose_records(n, keep_max, options.subsample_seed, tag);
    const auto label_values = labels.to_doubles();
    const std::size_t label_stride = label_values.size() / n;
    for (auto i : keep) labels_out.push_back(static_cast<int>(label_values[i * label_stride]));
    return hwc_to_unit_chw(images, keep, prefix + "_images");
  };

  std::vector<int> train_labels, val_labels, test_labels;
  const Tensor train_unit = decode("train", options.max_train, 1, train_labels);
  const Tensor val_unit = decode("val", options.max_test, 3, val_labels);
  const Tensor test_unit = decode("test", options.max_test, 2, test_labels);
  const NormStats stats = compute_norm_stats(train_unit);
  return {make_split(train_unit, std::move(train_labels), kBloodMnistClasses, "bloodmnist-train", stats),
          make_split(val_unit, std::move(val_labels), kBloodMnistClasses, "bloodmnist-val", stats),
          make_split(test_unit, std::move(test_labels), kBloodMnistClasses, "bloodmnist-test", stats)};
}

DatasetSplit make_synthetic(const SyntheticSpec& spec) {
  validate_synthetic(spec);
  const auto protos = synthetic_prototypes(spec);
  Rng rng = make_rng(spec.seed, {kStreamSynthetic, 1});
  auto draw = draw_synthetic(spec, protos, spec.n, rng);
  const NormStats stats = compute_norm_stats(draw.unit);
  return make_split(draw.unit, std::move(draw.labels), spec.num_classes, "synthetic", stats);
}

SyntheticSplits make_synthetic_pair(const SyntheticSpec& spec, std::int64_t n_test) {
  validate_synthetic(spec);
  if (n_test < 1) throw Error("make_synthetic_pair: n_test must be at least 1");
  const auto protos = synthetic_prototypes(spec);
  Rng rng = make_rng(spec.seed, {kStreamSynthetic, 1});
  auto train = draw_synthetic(spec, protos, spec.n, rng);
  auto test = draw_synthetic(spec, protos, n_test, rng);
  const NormStats stats = compute_norm_stats(train.unit);
  return {make_split(train.unit, std::move(train.labels), spec.num_classes, "synthetic-train", stats),
          make_split(test.unit, std::move(test.labels), spec.num_classes, "synthetic-test", stats)};
}

void write_synthetic_bloodmnist(const std::filesystem::path& path, std::int64_t n_train,
                                std::int64_t n_val, std::int64_t n_test, std::uint64_t seed,
                                std::int64_t side) {
  if (n_train < kBloodMnistClasses || n_val < 1 || n_test < 1) {
    throw Error("write_synthetic_bloodmnist: every split needs samples");
  }
  SyntheticSpec spec{n_train + n_val + n_test, 3, side, side, kBloodMnistClasses, seed};
  validate_synthetic(spec);
  const auto protos = synthetic_prototypes(spec);
  Rng rng = make_rng(seed, {kStreamSynthetic, 1});
  std::map<std::string, io::NpyArray> arrays;
  const std::pair<const char*, std::int64_t> splits[] = {
      {"train", n_train}, {"val", n_val}, {"test", n_test}};
  for (const auto& [key, n] : splits) {
    auto draw = draw_synthetic(spec, protos, n, rng);
    std::vector<std::uint8_t> pixels(static_cast<std::size_t>(n * side * side * 3));
    const double* src = draw.unit.data();
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t c = 0; c < 3; ++c) {
        for (std::int64_t p = 0; p < side * side; ++p) {
          const double v = src[(i * 3 + c) * side * side + p];
          pixels[static_cast<std::size_t>((i * side * side + p) * 3 + c)] =
              static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
        }
      }
    }
    std::vector<std::uint8_t> labels(draw.labels.begin(), draw.labels.end());
    arrays[std::string(key) + "_images"] = io::make_npy_u8({n, side, side, 3}, std::move(pixels));
    arrays[std::string(key) + "_labels"] = io::make_npy_u8({n, 1}, std::move(labels));
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  io::write_npz(path, arrays);
}

std::vector<std::vector<std::size_t>> batch_indices(std::int64_t n, std::int64_t batch_size,
                                                    std::uint64_t seed, std::uint64_t epoch,
                                                    bool shuffle) {
  if (batch_size < 1 || batch_size > n) {
    throw Error("batch_iter: batch size " + std::to_string(batch_size) + " outside [1, " +
                std::to_string(n) + "]");
  }
  std::vector<std::size_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  if (shuffle) {
    Rng rng = make_rng(seed, {kStreamBatch, epoch});
    order = permutation(order.size(), rng);
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::int64_t start = 0; start < n; start += batch_size) {
    const auto end = std::min(n, start + batch_size);
    out.emplace_back(order.begin() + start, order.begin() + end);
  }
  return out;
}

Batch make_batch(const DatasetSplit& split, const std::vector<std::size_t>& indices) {
  Batch b{gather_rows(split.images, indices), {}, indices};
  for (auto i : indices) b.labels.push_back(split.labels.at(i));
  return b;
}

std::vector<Batch> batch_iter(const DatasetSplit& split, std::int64_t batch_size,
                              std::uint64_t seed, bool shuffle, std::uint64_t epoch) {
  std::vector<Batch> out;
  for (const auto& idx : batch_indices(split.size(), batch_size, seed, epoch, shuffle)) {
    out.push_back(make_batch(split, idx));
  }
  return out;
}

}  // namespace fedshield::data
