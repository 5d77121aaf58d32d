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

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedshield/named_tensors.hpp"

// Named-tensor archive ("FSHDTNSR" format, documented in docs/formats.md):
//
//   magic "FSHDTNSR" | u32 version | u64 manifest length | manifest JSON | data
//
// The manifest lists every tensor with its group, dtype ("<f8"), shape,
// byte offset and byte length relative to the start of the data section,
// plus a free-form "meta" object. All integers and tensor payloads are
// little-endian.
namespace fedshield::io {

inline constexpr char kArchiveMagic[8] = {'F', 'S', 'H', 'D', 'T', 'N', 'S', 'R'};
inline constexpr std::uint32_t kArchiveVersion = 1;

struct ArchiveEntry {
  std::string name;
  std::string group;
  Tensor tensor;
};

struct Archive {
  std::vector<ArchiveEntry> entries;
  nlohmann::json meta = nlohmann::json::object();

  const ArchiveEntry* find(const std::string& name) const;
};

void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path);

Archive archive_from_parameters(const ModelParameters& params,
                                nlohmann::json meta = nlohmann::json::object());
ModelParameters parameters_from_archive(const Archive& archive);

// Entries with a fixed group label, e.g. "delta" for weight updates.
Archive archive_from_tensors(const NamedTensors& tensors, const std::string& group,
                             nlohmann::json meta = nlohmann::json::object());
NamedTensors tensors_from_archive(const Archive& archive);

}  // namespace fedshield::io
