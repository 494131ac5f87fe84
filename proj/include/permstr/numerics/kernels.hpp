// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dense kernels used by the tensor ops. The default implementations split
// output rows across OpenMP threads; every output element is produced by
// exactly one thread with a fixed summation order, so results do not depend
// on the thread count. `reference` holds plain serial loops kept as oracles
// for tests and as the baseline in the benchmark.

#include <cstddef>
#include <span>

#include "permstr/numerics/tensor.hpp"

namespace permstr::num::kernels {

// c[m×n] (+)= a[m×k] · b[k×n]
template <Scalar T>
void gemm(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
          std::size_t k, std::size_t n, bool accumulate);

// c[m×n] (+)= aᵀ · b with a stored as [k×m]
template <Scalar T>
void gemm_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate);

// c[m×n] (+)= a · bᵀ with b stored as [n×k]
template <Scalar T>
void gemm_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate);

template <Scalar T>
void transpose(std::span<const T> src, std::span<T> dst, std::size_t rows, std::size_t cols);

// Softmax over each contiguous row of length `cols`, in place.
template <Scalar T>
void softmax_rows(std::span<T> x, std::size_t rows, std::size_t cols);

namespace reference {

template <Scalar T>
void gemm(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
          std::size_t k, std::size_t n, bool accumulate);

template <Scalar T>
void gemm_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate);

template <Scalar T>
void gemm_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate);

template <Scalar T>
void softmax_rows(std::span<T> x, std::size_t rows, std::size_t cols);

}  // namespace reference

// Threads available to the parallel kernels (1 when built without OpenMP).
int max_threads();

}  // namespace permstr::num::kernels
