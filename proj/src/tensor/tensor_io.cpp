// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0

#include "convbn/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "convbn/errors.hpp"

namespace convbn {
namespace {

static_assert(std::endian::native == std::endian::little, "CBNT I/O assumes a little-endian host");

constexpr char kMagic[4] = {'C', 'B', 'N', 'T'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::byte*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void u8(std::uint8_t v) { bytes(&v, sizeof v); }
  std::vector<std::byte> take() { return std::move(out_); }

 private:
  std::vector<std::byte> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::byte> in) : in_(in) {}

  void bytes(void* p, std::size_t n, const char* what) {
    if (in_.size() - pos_ < n) {
      throw FormatError(std::string("truncated CBNT data while reading ") + what, pos_);
    }
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32(const char* what) {
    std::uint32_t v;
    bytes(&v, sizeof v, what);
    return v;
  }
  std::uint8_t u8(const char* what) {
    std::uint8_t v;
    bytes(&v, sizeof v, what);
    return v;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::byte> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::byte> encode_tensors(const TensorMap& tensors) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u8(static_cast<std::uint8_t>(t.dtype()));
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape().extents()) w.u32(static_cast<std::uint32_t>(e));
    if (t.dtype() == DType::F32) {
      for (double v : t.values()) {
        const float f = static_cast<float>(v);
        w.bytes(&f, sizeof f);
      }
    } else {
      w.bytes(t.data(), t.numel() * sizeof(double));
    }
  }
  return w.take();
}

TensorMap decode_tensors(std::span<const std::byte> bytes) {
  Reader r(bytes);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad CBNT magic", 0);
  const std::size_t version_at = r.pos();
  const auto version = r.u32("version");
  if (version != kVersion) {
    throw FormatError("unsupported CBNT version " + std::to_string(version), version_at);
  }
  const auto count = r.u32("tensor count");
  TensorMap out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.u32("name length");
    std::string name(name_len, '\0');
    r.bytes(name.data(), name_len, "name");
    const std::size_t dtype_at = r.pos();
    const auto dtype_byte = r.u8("dtype");
    if (dtype_byte > 1) {
      throw FormatError("invalid dtype byte " + std::to_string(dtype_byte) + " for tensor '" +
                            name + "'",
                        dtype_at);
    }
    const auto dtype = static_cast<DType>(dtype_byte);
    const std::size_t rank_at = r.pos();
    const auto rank = r.u32("rank");
    if (rank > Shape::kMaxRank) {
      throw FormatError("rank " + std::to_string(rank) + " exceeds 8", rank_at);
    }
    std::vector<std::int64_t> extents(rank);
    for (auto& e : extents) e = r.u32("extent");
    Shape shape(std::move(extents));
    std::vector<double> values(shape.numel());
    if (dtype == DType::F32) {
      for (auto& v : values) {
        float f;
        r.bytes(&f, sizeof f, "payload");
        v = f;
      }
    } else {
      r.bytes(values.data(), values.size() * sizeof(double), "payload");
    }
    const std::size_t name_at = r.pos();
    if (!out.emplace(name, Tensor(std::move(shape), std::move(values), dtype)).second) {
      throw FormatError("duplicate tensor name '" + name + "'", name_at);
    }
  }
  if (!r.done()) throw FormatError("trailing bytes after last tensor", r.pos());
  return out;
}

void write_tensors(const TensorMap& tensors, const std::filesystem::path& path) {
  const auto bytes = encode_tensors(tensors);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw InputError("cannot open '" + path.string() + "' for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw InputError("failed writing '" + path.string() + "'");
}

TensorMap read_tensors(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open '" + path.string() + "'");
  std::vector<char> raw((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_tensors(std::as_bytes(std::span<const char>(raw)));
}

}  // namespace convbn
