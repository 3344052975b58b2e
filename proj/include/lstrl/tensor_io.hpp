#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "lstrl/error.hpp"
#include "lstrl/tensor.hpp"

namespace lstrl {

// Portable tensor record: magic "LSTT", u8 dtype (0=f32, 1=f64), u8 rank,
// rank little-endian u32 dims, then the row-major payload (little-endian
// IEEE-754). Round-trips are bit-exact.

namespace detail {

inline void put_u8(std::ostream& os, std::uint8_t v) {
  os.put(static_cast<char>(v));
}

inline std::uint8_t get_u8(std::istream& is) {
  int c = is.get();
  if (c < 0) throw DataError("tensor stream truncated");
  return static_cast<std::uint8_t>(c);
}

inline void put_u16(std::ostream& os, std::uint16_t v) {
  put_u8(os, static_cast<std::uint8_t>(v & 0xff));
  put_u8(os, static_cast<std::uint8_t>(v >> 8));
}

inline std::uint16_t get_u16(std::istream& is) {
  std::uint16_t lo = get_u8(is);
  std::uint16_t hi = get_u8(is);
  return static_cast<std::uint16_t>(lo | (hi << 8));
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) put_u8(os, static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(get_u8(is)) << (8 * i);
  return v;
}

template <typename T>
constexpr std::uint8_t dtype_code() {
  if constexpr (std::is_same_v<T, float>) {
    return 0;
  } else {
    static_assert(std::is_same_v<T, double>);
    return 1;
  }
}

template <typename T>
void put_scalar(std::ostream& os, T v) {
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  Bits bits;
  std::memcpy(&bits, &v, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T); ++i)
    put_u8(os, static_cast<std::uint8_t>((bits >> (8 * i)) & 0xff));
}

template <typename T>
T get_scalar(std::istream& is) {
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  Bits bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    bits |= static_cast<Bits>(get_u8(is)) << (8 * i);
  T v;
  std::memcpy(&v, &bits, sizeof(T));
  return v;
}

}  // namespace detail

template <typename T>
void write_tensor(std::ostream& os, const DenseTensor<T>& t) {
  os.write("LSTT", 4);
  detail::put_u8(os, detail::dtype_code<T>());
  LSTRL_CHECK_DIM(t.rank() <= 255, "tensor rank exceeds format limit");
  detail::put_u8(os, static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d : t.shape) {
    LSTRL_CHECK_DIM(d <= UINT32_MAX, "tensor dim exceeds format limit");
    detail::put_u32(os, static_cast<std::uint32_t>(d));
  }
  for (T v : t.data) detail::put_scalar(os, v);
}

template <typename T>
DenseTensor<T> read_tensor(std::istream& is) {
  char magic[4] = {0, 0, 0, 0};
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, "LSTT", 4) != 0)
    throw DataError("bad tensor magic (expected LSTT)");
  const std::uint8_t dtype = detail::get_u8(is);
  if (dtype != detail::dtype_code<T>())
    throw DataError("tensor dtype code " + std::to_string(dtype) +
                    " does not match requested scalar type");
  const std::uint8_t rank = detail::get_u8(is);
  Shape shape(rank);
  for (auto& d : shape) d = detail::get_u32(is);
  DenseTensor<T> t(shape);
  for (auto& v : t.data) v = detail::get_scalar<T>(is);
  return t;
}

template <typename T>
void save_tensor(const std::filesystem::path& path, const DenseTensor<T>& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open for write: " + path.string());
  write_tensor(f, t);
  if (!f) throw DataError("write failed: " + path.string());
}

template <typename T>
DenseTensor<T> load_tensor(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open: " + path.string());
  return read_tensor<T>(f);
}

// Checkpoint: a sequence of named tensor records ordered by name.
// Each entry is u16 name length + name bytes + tensor record.
template <typename T>
void write_checkpoint(const std::filesystem::path& path,
                      const std::map<std::string, DenseTensor<T>>& entries) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open for write: " + path.string());
  for (const auto& [name, tensor] : entries) {  // std::map iterates name-sorted
    LSTRL_CHECK_DIM(name.size() <= UINT16_MAX, "checkpoint entry name too long");
    detail::put_u16(f, static_cast<std::uint16_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(f, tensor);
  }
  if (!f) throw DataError("write failed: " + path.string());
}

template <typename T>
std::map<std::string, DenseTensor<T>> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint: " + path.string());
  std::map<std::string, DenseTensor<T>> entries;
  while (f.peek() != std::char_traits<char>::eof()) {
    const std::uint16_t len = detail::get_u16(f);
    std::string name(len, '\0');
    f.read(name.data(), len);
    if (f.gcount() != len) throw DataError("checkpoint truncated: " + path.string());
    entries.emplace(std::move(name), read_tensor<T>(f));
  }
  return entries;
}

}  // namespace lstrl
