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

#include "fedshield/io/npz.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <regex>
#include <sstream>

#include "fedshield/errors.hpp"

namespace fedshield::io {
namespace {

constexpr std::uint32_t kLocalHeaderSig = 0x04034b50;
constexpr std::uint32_t kCentralHeaderSig = 0x02014b50;
constexpr std::uint32_t kEndOfCentralSig = 0x06054b50;
constexpr std::uint32_t kZip64EndSig = 0x06064b50;
constexpr std::uint32_t kZip64LocatorSig = 0x07064b50;

class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& buf, std::string source)
      : buf_(buf), source_(std::move(source)) {}

  std::uint64_t le(std::size_t offset, int width) const {
    if (offset + width > buf_.size()) throw IngestError(source_ + ": truncated zip structure");
    std::uint64_t v = 0;
    for (int i = width - 1; i >= 0; --i) v = (v << 8) | buf_[offset + i];
    return v;
  }
  std::uint16_t u16(std::size_t o) const { return static_cast<std::uint16_t>(le(o, 2)); }
  std::uint32_t u32(std::size_t o) const { return static_cast<std::uint32_t>(le(o, 4)); }
  std::uint64_t u64(std::size_t o) const { return le(o, 8); }
  std::size_t size() const { return buf_.size(); }
  const std::string& source() const { return source_; }

 private:
  const std::vector<std::uint8_t>& buf_;
  std::string source_;
};

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int width) {
  for (int i = 0; i < width; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError(path.string() + ": cannot open file");
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
}

std::vector<std::uint8_t> inflate_raw(const std::uint8_t* data, std::size_t size,
                                      std::size_t expected, const std::string& what) {
  std::vector<std::uint8_t> out(expected);
  z_stream zs{};
  if (inflateInit2(&zs, -MAX_WBITS) != Z_OK) throw IngestError(what + ": inflateInit failed");
  zs.next_in = const_cast<Bytef*>(data);
  zs.avail_in = static_cast<uInt>(size);
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = inflate(&zs, Z_FINISH);
  const auto produced = zs.total_out;
  inflateEnd(&zs);
  if (rc != Z_STREAM_END || produced != expected) {
    throw IngestError(what + ": corrupt deflate stream");
  }
  return out;
}

std::vector<std::uint8_t> deflate_raw(const std::vector<std::uint8_t>& data) {
  z_stream zs{};
  if (deflateInit2(&zs, 6, Z_DEFLATED, -MAX_WBITS, 8, Z_DEFAULT_STRATEGY) != Z_OK) {
    throw Error("deflateInit failed");
  }
  std::vector<std::uint8_t> out(deflateBound(&zs, static_cast<uLong>(data.size())));
  zs.next_in = const_cast<Bytef*>(data.data());
  zs.avail_in = static_cast<uInt>(data.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = deflate(&zs, Z_FINISH);
  out.resize(zs.total_out);
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) throw Error("deflate failed");
  return out;
}

std::size_t dtype_size(const std::string& descr) {
  if (descr.size() < 3) throw IngestError("unsupported npy dtype '" + descr + "'");
  return static_cast<std::size_t>(std::stoul(descr.substr(2)));
}

}  // namespace

std::size_t NpyArray::element_size() const { return dtype_size(descr); }

std::vector<double> NpyArray::to_doubles() const {
  const std::size_t n = static_cast<std::size_t>(shape_numel(shape));
  const std::size_t width = element_size();
  if (bytes.size() != n * width) throw IngestError("npy payload size does not match shape");
  if (descr[0] == '>') throw IngestError("big-endian npy arrays are not supported");
  const char kind = descr[1];
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* p = bytes.data() + i * width;
    std::uint64_t raw = 0;
    for (std::size_t b = 0; b < width; ++b) raw |= static_cast<std::uint64_t>(p[b]) << (8 * b);
    if (kind == 'u' || kind == 'b') {
      out[i] = static_cast<double>(raw);
    } else if (kind == 'i') {
      const int shift = static_cast<int>(64 - 8 * width);
      out[i] = static_cast<double>(static_cast<std::int64_t>(raw << shift) >> shift);
    } else if (kind == 'f' && width == 8) {
      double d;
      std::memcpy(&d, &raw, 8);
      out[i] = d;
    } else if (kind == 'f' && width == 4) {
      float f;
      const auto r32 = static_cast<std::uint32_t>(raw);
      std::memcpy(&f, &r32, 4);
      out[i] = f;
    } else {
      throw IngestError("unsupported npy dtype '" + descr + "'");
    }
  }
  return out;
}

NpyArray parse_npy(const std::vector<std::uint8_t>& blob) {
  static const std::uint8_t kMagic[] = {0x93, 'N', 'U', 'M', 'P', 'Y'};
  if (blob.size() < 10 || std::memcmp(blob.data(), kMagic, 6) != 0) {
    throw IngestError("not an npy payload (bad magic)");
  }
  const int major = blob[6];
  std::size_t header_len = 0, header_start = 0;
  if (major == 1) {
    header_len = blob[8] | (blob[9] << 8);
    header_start = 10;
  } else {
    if (blob.size() < 12) throw IngestError("truncated npy header");
    header_len = blob[8] | (blob[9] << 8) | (blob[10] << 16) | (static_cast<std::size_t>(blob[11]) << 24);
    header_start = 12;
  }
  if (header_start + header_len > blob.size()) throw IngestError("truncated npy header");
  const std::string header(reinterpret_cast<const char*>(blob.data() + header_start), header_len);

  NpyArray arr;
  std::smatch m;
  if (!std::regex_search(header, m, std::regex(R"('descr'\s*:\s*'([^']+)')"))) {
    throw IngestError("npy header lacks descr");
  }
  arr.descr = m[1];
  if (std::regex_search(header, m, std::regex(R"('fortran_order'\s*:\s*True)"))) {
    throw IngestError("fortran-ordered npy arrays are not supported");
  }
  if (!std::regex_search(header, m, std::regex(R"('shape'\s*:\s*\(([^)]*)\))"))) {
    throw IngestError("npy header lacks shape");
  }
  const std::string dims = m[1];
  std::regex num(R"(\d+)");
  for (auto it = std::sregex_iterator(dims.begin(), dims.end(), num); it != std::sregex_iterator();
       ++it) {
    arr.shape.push_back(std::stoll(it->str()));
  }
  const std::size_t data_start = header_start + header_len;
  const std::size_t expected = static_cast<std::size_t>(shape_numel(arr.shape)) * arr.element_size();
  if (blob.size() - data_start < expected) throw IngestError("truncated npy data");
  arr.bytes.assign(blob.begin() + static_cast<std::ptrdiff_t>(data_start),
                   blob.begin() + static_cast<std::ptrdiff_t>(data_start + expected));
  return arr;
}

std::vector<std::uint8_t> serialize_npy(const NpyArray& array) {
  std::ostringstream dict;
  dict << "{'descr': '" << array.descr << "', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < array.shape.size(); ++i) {
    dict << array.shape[i];
    if (array.shape.size() == 1 || i + 1 < array.shape.size()) dict << ",";
    if (i + 1 < array.shape.size()) dict << " ";
  }
  dict << "), }";
  std::string header = dict.str();
  // Pad so that the data starts on a 64-byte boundary, terminated by '\n'.
  const std::size_t unpadded = 10 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header.push_back('\n');
  std::vector<std::uint8_t> out = {0x93, 'N', 'U', 'M', 'P', 'Y', 1, 0};
  put_le(out, header.size(), 2);
  out.insert(out.end(), header.begin(), header.end());
  out.insert(out.end(), array.bytes.begin(), array.bytes.end());
  return out;
}

NpyArray make_npy_u8(Shape shape, std::vector<std::uint8_t> values) {
  if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
    throw ShapeError("make_npy_u8: value count mismatch");
  }
  return NpyArray{"|u1", std::move(shape), std::move(values)};
}

std::map<std::string, NpyArray> read_npz(const std::filesystem::path& path) {
  const auto buf = read_file(path);
  const ByteReader r(buf, path.string());
  if (buf.size() < 22) throw IngestError(path.string() + ": not a zip archive");

  std::size_t eocd = std::string::npos;
  const std::size_t scan_floor = buf.size() > 65557 ? buf.size() - 65557 : 0;
  for (std::size_t i = buf.size() - 22 + 1; i-- > scan_floor;) {
    if (r.u32(i) == kEndOfCentralSig) {
      eocd = i;
      break;
    }
  }
  if (eocd == std::string::npos) throw IngestError(path.string() + ": missing end of central directory");

  std::uint64_t entries = r.u16(eocd + 10);
  std::uint64_t cd_offset = r.u32(eocd + 16);
  if ((entries == 0xFFFF || cd_offset == 0xFFFFFFFF) && eocd >= 20 &&
      r.u32(eocd - 20) == kZip64LocatorSig) {
    const std::uint64_t z64 = r.u64(eocd - 20 + 8);
    if (r.u32(z64) != kZip64EndSig) throw IngestError(path.string() + ": bad zip64 record");
    entries = r.u64(z64 + 32);
    cd_offset = r.u64(z64 + 48);
  }

  std::map<std::string, NpyArray> out;
  std::size_t p = cd_offset;
  for (std::uint64_t e = 0; e < entries; ++e) {
    if (r.u32(p) != kCentralHeaderSig) throw IngestError(path.string() + ": corrupt central directory");
    const std::uint16_t method = r.u16(p + 10);
    const std::uint32_t crc = r.u32(p + 16);
    std::uint64_t comp_size = r.u32(p + 20);
    std::uint64_t raw_size = r.u32(p + 24);
    const std::uint16_t name_len = r.u16(p + 28);
    const std::uint16_t extra_len = r.u16(p + 30);
    const std::uint16_t comment_len = r.u16(p + 32);
    std::uint64_t local = r.u32(p + 42);
    if (p + 46 + name_len > buf.size()) throw IngestError(path.string() + ": truncated zip entry");
    std::string name(reinterpret_cast<const char*>(buf.data() + p + 46), name_len);

    // zip64 extended information: present fields follow the 0xFFFFFFFF markers.
    std::size_t x = p + 46 + name_len;
    const std::size_t x_end = x + extra_len;
    while (x + 4 <= x_end) {
      const std::uint16_t id = r.u16(x), len = r.u16(x + 2);
      if (id == 0x0001) {
        std::size_t f = x + 4;
        if (raw_size == 0xFFFFFFFF) { raw_size = r.u64(f); f += 8; }
        if (comp_size == 0xFFFFFFFF) { comp_size = r.u64(f); f += 8; }
        if (local == 0xFFFFFFFF) { local = r.u64(f); }
      }
      x += 4 + len;
    }
    p = x_end + comment_len;

    if (r.u32(local) != kLocalHeaderSig) throw IngestError(path.string() + ": corrupt local header for " + name);
    const std::size_t data_start = local + 30 + r.u16(local + 26) + r.u16(local + 28);
    if (data_start + comp_size > buf.size()) throw IngestError(path.string() + ": truncated member " + name);

    std::vector<std::uint8_t> payload;
    if (method == 0) {
      payload.assign(buf.begin() + static_cast<std::ptrdiff_t>(data_start),
                     buf.begin() + static_cast<std::ptrdiff_t>(data_start + comp_size));
    } else if (method == 8) {
      payload = inflate_raw(buf.data() + data_start, comp_size, raw_size, path.string() + ":" + name);
    } else {
      throw IngestError(path.string() + ": unsupported compression method for " + name);
    }
    if (::crc32(0L, payload.data(), static_cast<uInt>(payload.size())) != crc) {
      throw IngestError(path.string() + ": CRC mismatch for " + name);
    }
    if (name.size() > 4 && name.ends_with(".npy")) name.resize(name.size() - 4);
    out.emplace(name, parse_npy(payload));
  }
  return out;
}

void write_npz(const std::filesystem::path& path, const std::map<std::string, NpyArray>& arrays,
               bool compress) {
  std::vector<std::uint8_t> out;
  std::vector<std::uint8_t> central;
  for (const auto& [key, arr] : arrays) {
    const std::string name = key + ".npy";
    const auto raw = serialize_npy(arr);
    const auto crc = ::crc32(0L, raw.data(), static_cast<uInt>(raw.size()));
    const auto body = compress ? deflate_raw(raw) : raw;
    const std::uint16_t method = compress ? 8 : 0;
    const std::uint64_t offset = out.size();

    put_le(out, kLocalHeaderSig, 4);
    put_le(out, 20, 2);  // version needed
    put_le(out, 0, 2);   // flags
    put_le(out, method, 2);
    put_le(out, 0, 2);      // time
    put_le(out, 0x21, 2);   // date: 1980-01-01
    put_le(out, crc, 4);
    put_le(out, body.size(), 4);
    put_le(out, raw.size(), 4);
    put_le(out, name.size(), 2);
    put_le(out, 0, 2);
    out.insert(out.end(), name.begin(), name.end());
    out.insert(out.end(), body.begin(), body.end());

    put_le(central, kCentralHeaderSig, 4);
    put_le(central, 20, 2);
    put_le(central, 20, 2);
    put_le(central, 0, 2);
    put_le(central, method, 2);
    put_le(central, 0, 2);
    put_le(central, 0x21, 2);
    put_le(central, crc, 4);
    put_le(central, body.size(), 4);
    put_le(central, raw.size(), 4);
    put_le(central, name.size(), 2);
    put_le(central, 0, 2);  // extra
    put_le(central, 0, 2);  // comment
    put_le(central, 0, 2);  // disk
    put_le(central, 0, 2);  // internal attrs
    put_le(central, 0, 4);  // external attrs
    put_le(central, offset, 4);
    central.insert(central.end(), name.begin(), name.end());
  }
  const std::uint64_t cd_offset = out.size();
  out.insert(out.end(), central.begin(), central.end());
  put_le(out, kEndOfCentralSig, 4);
  put_le(out, 0, 2);
  put_le(out, 0, 2);
  put_le(out, arrays.size(), 2);
  put_le(out, arrays.size(), 2);
  put_le(out, central.size(), 4);
  put_le(out, cd_offset, 4);
  put_le(out, 0, 2);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(path.string() + ": cannot open for writing");
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
}

}  // namespace fedshield::io
