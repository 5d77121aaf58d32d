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

#include "fedshield/io/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "fedshield/errors.hpp"

namespace fedshield::io {
namespace {

static_assert(std::endian::native == std::endian::little,
              "archive I/O assumes a little-endian host");

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is, const std::string& source) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw IngestError(source + ": truncated archive header");
  }
  return v;
}

}  // namespace

const ArchiveEntry* Archive::find(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  nlohmann::json manifest;
  manifest["version"] = kArchiveVersion;
  manifest["meta"] = archive.meta;
  manifest["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& e : archive.entries) {
    const std::uint64_t nbytes = e.tensor.size() * sizeof(double);
    manifest["tensors"].push_back({{"name", e.name},
                                   {"group", e.group},
                                   {"dtype", "<f8"},
                                   {"shape", e.tensor.shape()},
                                   {"offset", offset},
                                   {"nbytes", nbytes}});
    offset += nbytes;
  }
  const std::string text = manifest.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(path.string() + ": cannot open for writing");
  os.write(kArchiveMagic, sizeof(kArchiveMagic));
  put<std::uint32_t>(os, kArchiveVersion);
  put<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& e : archive.entries) {
    os.write(reinterpret_cast<const char*>(e.tensor.data()),
             static_cast<std::streamsize>(e.tensor.size() * sizeof(double)));
  }
  if (!os) throw Error(path.string() + ": write failed");
}

Archive read_archive(const std::filesystem::path& path) {
  const std::string source = path.string();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IngestError(source + ": cannot open archive");
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kArchiveMagic, 8) != 0) {
    throw IngestError(source + ": not a tensor archive (bad magic)");
  }
  const auto version = get<std::uint32_t>(is, source);
  if (version != kArchiveVersion) {
    throw IngestError(source + ": unsupported archive version " + std::to_string(version));
  }
  const auto manifest_len = get<std::uint64_t>(is, source);
  std::string text(manifest_len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(manifest_len))) {
    throw IngestError(source + ": truncated manifest");
  }
  const auto manifest = nlohmann::json::parse(text);
  const auto data_start = static_cast<std::uint64_t>(is.tellg());

  Archive archive;
  archive.meta = manifest.value("meta", nlohmann::json::object());
  for (const auto& t : manifest.at("tensors")) {
    if (t.at("dtype") != "<f8") throw IngestError(source + ": unsupported dtype");
    Shape shape = t.at("shape").get<Shape>();
    const auto nbytes = t.at("nbytes").get<std::uint64_t>();
    if (nbytes != static_cast<std::uint64_t>(shape_numel(shape)) * sizeof(double)) {
      throw IngestError(source + ": size mismatch for " + t.at("name").get<std::string>());
    }
    Tensor tensor(shape);
    is.seekg(static_cast<std::streamoff>(data_start + t.at("offset").get<std::uint64_t>()));
    if (!is.read(reinterpret_cast<char*>(tensor.data()), static_cast<std::streamsize>(nbytes))) {
      throw IngestError(source + ": truncated data for " + t.at("name").get<std::string>());
    }
    archive.entries.push_back({t.at("name"), t.at("group"), std::move(tensor)});
  }
  return archive;
}

Archive archive_from_parameters(const ModelParameters& params, nlohmann::json meta) {
  Archive a;
  a.meta = std::move(meta);
  for (const auto& [name, t] : params.tensors()) {
    a.entries.push_back({name, group_name(params.group_of(name)), t});
  }
  return a;
}

ModelParameters parameters_from_archive(const Archive& archive) {
  ModelParameters p;
  for (const auto& e : archive.entries) p.add(e.name, parse_group(e.group), e.tensor);
  return p;
}

Archive archive_from_tensors(const NamedTensors& tensors, const std::string& group,
                             nlohmann::json meta) {
  Archive a;
  a.meta = std::move(meta);
  for (const auto& [name, t] : tensors) a.entries.push_back({name, group, t});
  return a;
}

NamedTensors tensors_from_archive(const Archive& archive) {
  NamedTensors out;
  for (const auto& e : archive.entries) out.set(e.name, e.tensor);
  return out;
}

}  // namespace fedshield::io
