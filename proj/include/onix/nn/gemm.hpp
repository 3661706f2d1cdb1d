#pragma once

#include <cstdint>

#include "onix/parallel.hpp"

namespace onix::nn {

// Row-stable GEMM kernels: every output element is accumulated in a fixed
// serial order (ascending inner index), independent of row partitioning.
// Results are therefore bit-identical for any chunking of the row dimension
// and any worker count.

/// C[M,N] += A[M,K] * B[K,N]
template <typename T>
void gemm_nn_acc(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k, std::int64_t n) {
  const bool par = workers() > 1 && 2.0 * m * k * n > 4e6;
  parallel_for(m, [&](std::int64_t i, int) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::int64_t kk = 0; kk < k; ++kk) {
      const T aik = arow[kk];
      const T* brow = b + kk * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }, par ? 0 : 1);
}

/// C[M,K] += A[M,N] * B[K,N]^T  (rows of B as dot partners)
template <typename T>
void gemm_nt_acc(const T* a, const T* b, T* c, std::int64_t m, std::int64_t n, std::int64_t k) {
  const bool par = workers() > 1 && 2.0 * m * k * n > 4e6;
  parallel_for(m, [&](std::int64_t i, int) {
    const T* arow = a + i * n;
    T* crow = c + i * k;
    for (std::int64_t kk = 0; kk < k; ++kk) {
      const T* brow = b + kk * n;
      T acc = T(0);
      for (std::int64_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
      crow[kk] += acc;
    }
  }, par ? 0 : 1);
}

/// C[K,N] += A[M,K]^T * B[M,N]  (batched outer products, ascending batch row)
template <typename T>
void gemm_tn_acc(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k, std::int64_t n) {
  const bool par = workers() > 1 && 2.0 * m * k * n > 4e6;
  parallel_for(k, [&](std::int64_t kk, int) {
    T* crow = c + kk * n;
    for (std::int64_t i = 0; i < m; ++i) {
      const T aik = a[i * k + kk];
      const T* brow = b + i * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }, par ? 0 : 1);
}

}  // namespace onix::nn
