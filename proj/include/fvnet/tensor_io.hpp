#pragma once

// TensorFile: the on-disk container for tensors, parameters and exported FVs.
//
//   offset  size        field
//   0       4           magic "FVNT"
//   4       4           version (u32 LE) = 1
//   8       4           dtype code (u32 LE): 1 = f32, 2 = f64
//   12      4           ndim (u32 LE)
//   16      4*ndim      dims (u32 LE each)
//   ...     payload     row-major little-endian values
//
// No padding anywhere. Payload values of an f32 file are upcast to f64 on read.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "fvnet/error.hpp"
#include "fvnet/tensor.hpp"

namespace fvnet {

enum class DType : std::uint32_t { f32 = 1, f64 = 2 };

inline constexpr std::uint32_t kTensorFileVersion = 1;

/// A rank-generic array as stored in a TensorFile.
struct TensorFile {
  DType dtype = DType::f64;
  std::vector<std::uint32_t> dims;
  std::vector<double> values;

  std::size_t element_count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

namespace detail {

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

inline void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline std::vector<unsigned char> encode_tensor_file(const TensorFile& f) {
  if (f.values.size() != f.element_count()) {
    throw ShapeError("tensor file payload has " + std::to_string(f.values.size()) +
                     " values but dims imply " + std::to_string(f.element_count()));
  }
  std::vector<unsigned char> out{'F', 'V', 'N', 'T'};
  const std::size_t width = f.dtype == DType::f32 ? 4 : 8;
  out.reserve(16 + 4 * f.dims.size() + width * f.values.size());
  detail::put_u32(out, kTensorFileVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(f.dtype));
  detail::put_u32(out, static_cast<std::uint32_t>(f.dims.size()));
  for (auto d : f.dims) detail::put_u32(out, d);
  for (double v : f.values) {
    if (f.dtype == DType::f32) {
      detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    } else {
      detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
  }
  return out;
}

inline TensorFile decode_tensor_file(std::span<const unsigned char> bytes) {
  if (bytes.size() < 4) throw ParseError("truncated header");
  if (std::memcmp(bytes.data(), "FVNT", 4) != 0) throw ParseError("bad magic");
  if (bytes.size() < 16) throw ParseError("truncated header");
  const auto version = detail::get_u32(bytes.data() + 4);
  if (version != kTensorFileVersion) {
    throw ParseError("unsupported version " + std::to_string(version));
  }
  const auto code = detail::get_u32(bytes.data() + 8);
  if (code != 1 && code != 2) throw ParseError("bad dtype code " + std::to_string(code));
  TensorFile f;
  f.dtype = static_cast<DType>(code);
  const auto ndim = detail::get_u32(bytes.data() + 12);
  if (bytes.size() < 16 + 4ull * ndim) throw ParseError("truncated header");
  f.dims.resize(ndim);
  for (std::uint32_t i = 0; i < ndim; ++i) f.dims[i] = detail::get_u32(bytes.data() + 16 + 4 * i);
  const std::size_t count = f.element_count();
  const std::size_t width = f.dtype == DType::f32 ? 4 : 8;
  const std::size_t start = 16 + 4ull * ndim;
  if (bytes.size() - start < count * width) throw ParseError("truncated payload");
  if (bytes.size() - start > count * width) throw ParseError("trailing bytes after payload");
  f.values.resize(count);
  const unsigned char* p = bytes.data() + start;
  for (std::size_t i = 0; i < count; ++i, p += width) {
    f.values[i] = f.dtype == DType::f32
                      ? static_cast<double>(std::bit_cast<float>(detail::get_u32(p)))
                      : std::bit_cast<double>(detail::get_u64(p));
  }
  return f;
}

inline void write_tensor_file(const std::string& path, const TensorFile& f) {
  const auto bytes = encode_tensor_file(f);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

inline TensorFile read_tensor_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_tensor_file(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

/// Writes a Tensor4 as a rank-4 file.
inline void write_tensor(const std::string& path, const Tensor4& t, DType dtype = DType::f64) {
  TensorFile f;
  f.dtype = dtype;
  for (auto d : t.dims()) f.dims.push_back(static_cast<std::uint32_t>(d));
  f.values = t.storage();
  write_tensor_file(path, f);
}

/// Reads a file of rank <= 4 as a Tensor4; lower ranks are left-padded with
/// unit extents, so a vector of length n becomes (1, 1, 1, n).
inline Tensor4 read_tensor(const std::string& path) {
  auto f = read_tensor_file(path);
  if (f.dims.size() > 4) {
    throw ShapeError(path + ": rank " + std::to_string(f.dims.size()) + " exceeds 4");
  }
  Dims4 dims{1, 1, 1, 1};
  const std::size_t pad = 4 - f.dims.size();
  for (std::size_t i = 0; i < f.dims.size(); ++i) dims[pad + i] = f.dims[i];
  return Tensor4(dims, std::move(f.values));
}

/// Writes a plain vector (e.g. an exported Fisher vector) as a rank-1 file.
inline void write_vector(const std::string& path, std::span<const double> v, DType dtype = DType::f64) {
  TensorFile f;
  f.dtype = dtype;
  f.dims = {static_cast<std::uint32_t>(v.size())};
  f.values.assign(v.begin(), v.end());
  write_tensor_file(path, f);
}

}  // namespace fvnet
