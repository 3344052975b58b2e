#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "lstrl/error.hpp"
#include "lstrl/rng.hpp"

namespace lstrl {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

// Row-major strides.
inline std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// Dense n-dimensional array of reals, row-major.
template <typename T>
struct DenseTensor {
  static_assert(std::is_floating_point_v<T>);

  Shape shape;
  std::vector<T> data;
  bool requires_grad = false;

  DenseTensor() = default;
  explicit DenseTensor(Shape s, T fill = T(0))
      : shape(std::move(s)), data(numel(shape), fill) {}
  DenseTensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    LSTRL_CHECK_DIM(numel(shape) == data.size(),
                    "tensor data length " + std::to_string(data.size()) +
                        " does not match shape " + shape_str(shape));
  }

  static DenseTensor zeros(Shape s) { return DenseTensor(std::move(s)); }
  static DenseTensor full(Shape s, T v) { return DenseTensor(std::move(s), v); }

  static DenseTensor random_uniform(Shape s, Rng& rng, T lo, T hi) {
    DenseTensor t(std::move(s));
    for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
  }

  static DenseTensor random_normal(Shape s, Rng& rng, T sigma = T(1)) {
    DenseTensor t(std::move(s));
    for (auto& v : t.data) v = static_cast<T>(rng.normal() * sigma);
    return t;
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape[i]; }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  template <typename U>
  DenseTensor<U> cast() const {
    DenseTensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    out.requires_grad = requires_grad;
    return out;
  }
};

// Finite iff the exponent bits are not all ones; the bit test keeps this scan
// cheap enough to run after every forward op.
template <typename T>
bool all_finite(const DenseTensor<T>& t) {
  if constexpr (sizeof(T) == 4) {
    for (T v : t.data) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      if ((bits & 0x7F800000u) == 0x7F800000u) return false;
    }
  } else {
    for (T v : t.data) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, 8);
      if ((bits & 0x7FF0000000000000ull) == 0x7FF0000000000000ull) return false;
    }
  }
  return true;
}

template <typename T>
T max_abs(const DenseTensor<T>& t) {
  T m = T(0);
  for (T v : t.data) m = std::max(m, std::abs(v));
  return m;
}

// Learnable weight: value plus gradient and Adam moment accumulators.
template <typename T>
struct ParamTensor {
  std::string name;
  DenseTensor<T> value;
  DenseTensor<T> grad;
  DenseTensor<T> adam_m;
  DenseTensor<T> adam_v;
  std::uint64_t step_count = 0;

  ParamTensor() = default;
  ParamTensor(std::string n, DenseTensor<T> v)
      : name(std::move(n)),
        value(std::move(v)),
        grad(value.shape),
        adam_m(value.shape),
        adam_v(value.shape) {
    value.requires_grad = true;
  }

  void zero_grad() { grad.fill(T(0)); }
};

// Glorot-style uniform init in +-sqrt(6/(fan_in+fan_out)).
template <typename T>
DenseTensor<T> glorot_uniform(Shape s, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return DenseTensor<T>::random_uniform(std::move(s), rng, static_cast<T>(-bound),
                                        static_cast<T>(bound));
}

}  // namespace lstrl
