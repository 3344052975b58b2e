#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace lstrl::detail {

// Accumulating GEMM kernels. All of them ADD into c, so callers zero c for a
// plain product. Parallelism is over output rows with a fixed inner summation
// order, which keeps results bit-identical for any thread count.

template <typename T>
std::vector<T> transpose_scratch(const T* a, std::size_t rows, std::size_t cols) {
  std::vector<T> at(rows * cols);
  constexpr std::size_t kBlock = 32;
  for (std::size_t i0 = 0; i0 < rows; i0 += kBlock)
    for (std::size_t j0 = 0; j0 < cols; j0 += kBlock) {
      const std::size_t i1 = std::min(rows, i0 + kBlock), j1 = std::min(cols, j0 + kBlock);
      for (std::size_t i = i0; i < i1; ++i)
        for (std::size_t j = j0; j < j1; ++j) at[j * rows + i] = a[i * cols + j];
    }
  return at;
}

template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n);

// c[m,n] += a[m,k] * b[k,n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  if (n < 16 && k >= 64) {
    // narrow outputs vectorize poorly; run as row dots against b^T instead
    auto bt = transpose_scratch(b, k, n);
    gemm_nt(a, bt.data(), c, m, k, n);
    return;
  }
  const std::int64_t mm = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static) if (m * n * k > 16384)
  for (std::int64_t i = 0; i < mm; ++i) {
    const T* arow = a + static_cast<std::size_t>(i) * k;
    T* crow = c + static_cast<std::size_t>(i) * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m,n] += a[m,k] * b[n,k]^T   (rows of a dotted with rows of b)
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  const std::int64_t mm = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static) if (m * n * k > 16384)
  for (std::int64_t i = 0; i < mm; ++i) {
    const T* arow = a + static_cast<std::size_t>(i) * k;
    T* crow = c + static_cast<std::size_t>(i) * n;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc = T(0);
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// c[k,n] += a[m,k]^T * b[m,n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  if (m >= 256) {
    // column walks over a large `a` thrash the cache; transpose once and
    // stream. c[p,:] += sum_i at[p,i] * b[i,:] is gemm_nn(at, b) with m=k.
    auto at = transpose_scratch(a, m, k);
    const std::int64_t kk = static_cast<std::int64_t>(k);
#pragma omp parallel for schedule(static) if (m * n * k > 16384)
    for (std::int64_t p = 0; p < kk; ++p) {
      const T* atrow = at.data() + static_cast<std::size_t>(p) * m;
      T* crow = c + static_cast<std::size_t>(p) * n;
      for (std::size_t i = 0; i < m; ++i) {
        const T av = atrow[i];
        const T* brow = b + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
    return;
  }
  const std::int64_t kk = static_cast<std::int64_t>(k);
#pragma omp parallel for schedule(static) if (m * n * k > 16384)
  for (std::int64_t p = 0; p < kk; ++p) {
    T* crow = c + static_cast<std::size_t>(p) * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = a[i * k + static_cast<std::size_t>(p)];
      const T* brow = b + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace lstrl::detail
