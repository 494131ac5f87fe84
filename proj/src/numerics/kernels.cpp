// SPDX-License-Identifier: Apache-2.0
#include "permstr/numerics/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace permstr::num::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

template <Scalar T>
void gemm_rows(const T* a, const T* b, T* c, std::size_t row_begin, std::size_t row_end,
               std::size_t k, std::size_t n, bool accumulate) {
  std::size_t i = row_begin;
  // Four output rows share each streamed row of b.
  for (; i + 4 <= row_end; i += 4) {
    T* c0 = c + i * n;
    T* c1 = c0 + n;
    T* c2 = c1 + n;
    T* c3 = c2 + n;
    if (!accumulate) {
      std::fill(c0, c0 + 4 * n, T{0});
    }
    const T* a0 = a + i * k;
    const T* a1 = a0 + k;
    const T* a2 = a1 + k;
    const T* a3 = a2 + k;
    for (std::size_t p = 0; p < k; ++p) {
      const T v0 = a0[p];
      const T v1 = a1[p];
      const T v2 = a2[p];
      const T v3 = a3[p];
      const T* brow = b + p * n;
#pragma omp simd
      for (std::size_t j = 0; j < n; ++j) {
        const T bj = brow[j];
        c0[j] += v0 * bj;
        c1[j] += v1 * bj;
        c2[j] += v2 * bj;
        c3[j] += v3 * bj;
      }
    }
  }
  for (; i < row_end; ++i) {
    T* crow = c + i * n;
    if (!accumulate) {
      std::fill(crow, crow + n, T{0});
    }
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T v = arow[p];
      const T* brow = b + p * n;
#pragma omp simd
      for (std::size_t j = 0; j < n; ++j) {
        crow[j] += v * brow[j];
      }
    }
  }
}

}  // namespace

int max_threads() {
#if defined(_OPENMP)
  return omp_get_max_threads();
#else
  return 1;
#endif
}

template <Scalar T>
void gemm(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
          std::size_t k, std::size_t n, bool accumulate) {
  if (m == 0 || n == 0) {
    return;
  }
  const bool parallel = m * k * n >= kParallelWork && max_threads() > 1 && m >= 8;
  if (!parallel) {
    gemm_rows(a.data(), b.data(), c.data(), 0, m, k, n, accumulate);
    return;
  }
  // Row blocks of four keep the register-blocked path on every thread.
  const auto blocks = static_cast<std::int64_t>((m + 3) / 4);
#pragma omp parallel for schedule(static)
  for (std::int64_t blk = 0; blk < blocks; ++blk) {
    const std::size_t begin = static_cast<std::size_t>(blk) * 4;
    const std::size_t end = std::min(begin + 4, m);
    gemm_rows(a.data(), b.data(), c.data(), begin, end, k, n, accumulate);
  }
}

template <Scalar T>
void transpose(std::span<const T> src, std::span<T> dst, std::size_t rows, std::size_t cols) {
  constexpr std::size_t tile = 16;
  for (std::size_t i0 = 0; i0 < rows; i0 += tile) {
    for (std::size_t j0 = 0; j0 < cols; j0 += tile) {
      const std::size_t i1 = std::min(i0 + tile, rows);
      const std::size_t j1 = std::min(j0 + tile, cols);
      for (std::size_t i = i0; i < i1; ++i) {
        for (std::size_t j = j0; j < j1; ++j) {
          dst[j * rows + i] = src[i * cols + j];
        }
      }
    }
  }
}

template <Scalar T>
void gemm_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
  std::vector<T> at(m * k);
  transpose<T>(a, at, k, m);
  gemm<T>(at, b, c, m, k, n, accumulate);
}

template <Scalar T>
void gemm_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
  std::vector<T> bt(k * n);
  transpose<T>(b, bt, n, k);
  gemm<T>(a, bt, c, m, k, n, accumulate);
}

template <Scalar T>
void softmax_rows(std::span<T> x, std::size_t rows, std::size_t cols) {
  const auto count = static_cast<std::int64_t>(rows);
#pragma omp parallel for schedule(static) if (rows * cols >= kParallelWork)
  for (std::int64_t r = 0; r < count; ++r) {
    T* row = x.data() + static_cast<std::size_t>(r) * cols;
    T peak = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < cols; ++j) {
      peak = std::max(peak, row[j]);
    }
    T total = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      row[j] = std::exp(row[j] - peak);
      total += row[j];
    }
    const T inv = T{1} / total;
    for (std::size_t j = 0; j < cols; ++j) {
      row[j] *= inv;
    }
  }
}

namespace reference {

template <Scalar T>
void gemm(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
          std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = accumulate ? c[i * n + j] : T{0};
      for (std::size_t p = 0; p < k; ++p) {
        acc += a[i * k + p] * b[p * n + j];
      }
      c[i * n + j] = acc;
    }
  }
}

template <Scalar T>
void gemm_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = accumulate ? c[i * n + j] : T{0};
      for (std::size_t p = 0; p < k; ++p) {
        acc += a[p * m + i] * b[p * n + j];
      }
      c[i * n + j] = acc;
    }
  }
}

template <Scalar T>
void gemm_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = accumulate ? c[i * n + j] : T{0};
      for (std::size_t p = 0; p < k; ++p) {
        acc += a[i * k + p] * b[j * k + p];
      }
      c[i * n + j] = acc;
    }
  }
}

template <Scalar T>
void softmax_rows(std::span<T> x, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = x.data() + r * cols;
    const T peak = *std::max_element(row, row + cols);
    T total = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      row[j] = std::exp(row[j] - peak);
      total += row[j];
    }
    for (std::size_t j = 0; j < cols; ++j) {
      row[j] /= total;
    }
  }
}

}  // namespace reference

#define PERMSTR_INSTANTIATE_KERNELS(T)                                                   \
  template void gemm<T>(std::span<const T>, std::span<const T>, std::span<T>,            \
                        std::size_t, std::size_t, std::size_t, bool);                    \
  template void gemm_tn<T>(std::span<const T>, std::span<const T>, std::span<T>,         \
                           std::size_t, std::size_t, std::size_t, bool);                 \
  template void gemm_nt<T>(std::span<const T>, std::span<const T>, std::span<T>,         \
                           std::size_t, std::size_t, std::size_t, bool);                 \
  template void transpose<T>(std::span<const T>, std::span<T>, std::size_t, std::size_t); \
  template void softmax_rows<T>(std::span<T>, std::size_t, std::size_t);                 \
  template void reference::gemm<T>(std::span<const T>, std::span<const T>, std::span<T>, \
                                   std::size_t, std::size_t, std::size_t, bool);         \
  template void reference::gemm_tn<T>(std::span<const T>, std::span<const T>,            \
                                      std::span<T>, std::size_t, std::size_t,            \
                                      std::size_t, bool);                                \
  template void reference::gemm_nt<T>(std::span<const T>, std::span<const T>,            \
                                      std::span<T>, std::size_t, std::size_t,            \
                                      std::size_t, bool);                                \
  template void reference::softmax_rows<T>(std::span<T>, std::size_t, std::size_t);

PERMSTR_INSTANTIATE_KERNELS(float)
PERMSTR_INSTANTIATE_KERNELS(double)

#undef PERMSTR_INSTANTIATE_KERNELS

}  // namespace permstr::num::kernels
