#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "ucdr/errors.hpp"
#include "ucdr/tensor.hpp"

// Binary tensor container: magic "UCDT", u32 version, u32 rank, u64 per
// dimension, then the row-major float32 payload. Little-endian throughout.

namespace ucdr {

static_assert(std::endian::native == std::endian::little, "tensor container assumes a little-endian host");

inline constexpr std::uint32_t kTensorFormatVersion = 1;

namespace detail {

template <typename V>
void write_pod(std::ostream& out, const V& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_pod(std::istream& in, const std::string& context) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!in) {
    throw IoError(context + ": truncated at byte " + std::to_string(static_cast<long long>(in.gcount())));
  }
  return v;
}

}  // namespace detail

inline void write_tensor(std::ostream& out, const Tensor<float>& t) {
  out.write("UCDT", 4);
  detail::write_pod(out, kTensorFormatVersion);
  detail::write_pod(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) detail::write_pod(out, static_cast<std::uint64_t>(d));
  out.write(reinterpret_cast<const char*>(t.data().data()),
            static_cast<std::streamsize>(t.size() * sizeof(float)));
  if (!out) throw IoError("write_tensor: stream failure");
}

inline Tensor<float> read_tensor(std::istream& in) {
  char magic[4];
  const auto start = in.tellg();
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "UCDT") {
    throw FormatError("read_tensor: bad magic at byte " + std::to_string(static_cast<long long>(start)));
  }
  const auto version = detail::read_pod<std::uint32_t>(in, "read_tensor: version");
  if (version != kTensorFormatVersion) {
    throw FormatError("read_tensor: unsupported version " + std::to_string(version));
  }
  const auto rank = detail::read_pod<std::uint32_t>(in, "read_tensor: rank");
  if (rank > 8) throw FormatError("read_tensor: implausible rank " + std::to_string(rank));
  Shape shape(rank);
  for (std::uint32_t i = 0; i < rank; ++i) {
    shape[i] = static_cast<std::size_t>(detail::read_pod<std::uint64_t>(in, "read_tensor: dims"));
  }
  Tensor<float> t = Tensor<float>::zeros(shape);
  in.read(reinterpret_cast<char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
  if (!in) {
    throw IoError("read_tensor: payload truncated, expected " + std::to_string(t.size() * sizeof(float)) +
                  " bytes, got " + std::to_string(static_cast<long long>(in.gcount())));
  }
  return t;
}

inline void save_tensor(const std::string& path, const Tensor<float>& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("save_tensor: cannot open " + path);
  write_tensor(out, t);
}

inline Tensor<float> load_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_tensor: cannot open " + path);
  return read_tensor(in);
}

}  // namespace ucdr
