#pragma once

#include <algorithm>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace rlfn::detail {

// Register-blocked GEMM used by the convolution kernels.
//
// Every output element is owned by exactly one micro-tile and accumulated over k in increasing
// order, then added to the existing C value once. Results are therefore bitwise reproducible for
// any thread count.

template <typename T>
struct Vec {
  typedef T type __attribute__((vector_size(32)));
  static constexpr int lanes = 32 / sizeof(T);
};

template <typename T>
inline typename Vec<T>::type load_vec(const T* p) {
  typename Vec<T>::type v;
  std::memcpy(&v, p, sizeof(v));
  return v;
}

template <typename T>
inline void store_vec(T* p, typename Vec<T>::type v) {
  std::memcpy(p, &v, sizeof(v));
}

inline constexpr int kGemmMr = 6;

// C[M x N] += A[M x K] * B[K x N]; all row-major.
template <typename T>
void gemm_accumulate(int M, int N, int K, const T* A, int lda, const T* B, int ldb, T* C, int ldc) {
  using V = typename Vec<T>::type;
  constexpr int L = Vec<T>::lanes;
  constexpr int Nr = 2 * L;
  if (M <= 0 || N <= 0 || K <= 0) return;
  const int m_panels = (M + kGemmMr - 1) / kGemmMr;
  const int n_panels = (N + Nr - 1) / Nr;

  // A packed as [panel][k][kGemmMr], zero padded past M.
  std::vector<T> a_packed(static_cast<std::size_t>(m_panels) * K * kGemmMr, T(0));
  for (int p = 0; p < m_panels; ++p) {
    T* dst = a_packed.data() + static_cast<std::size_t>(p) * K * kGemmMr;
    const int rows = std::min(kGemmMr, M - p * kGemmMr);
    for (int i = 0; i < rows; ++i) {
      const T* src = A + static_cast<std::size_t>(p * kGemmMr + i) * lda;
      for (int k = 0; k < K; ++k) dst[k * kGemmMr + i] = src[k];
    }
  }

#pragma omp parallel
  {
    std::vector<T> b_packed(static_cast<std::size_t>(K) * Nr);
#pragma omp for schedule(static)
    for (int q = 0; q < n_panels; ++q) {
      const int j0 = q * Nr;
      const int cols = std::min(Nr, N - j0);
      for (int k = 0; k < K; ++k) {
        const T* src = B + static_cast<std::size_t>(k) * ldb + j0;
        T* dst = b_packed.data() + static_cast<std::size_t>(k) * Nr;
        std::memcpy(dst, src, sizeof(T) * cols);
        std::fill(dst + cols, dst + Nr, T(0));
      }
      for (int p = 0; p < m_panels; ++p) {
        const T* ap = a_packed.data() + static_cast<std::size_t>(p) * K * kGemmMr;
        const T* bp = b_packed.data();
        V acc[kGemmMr][2] = {};
        for (int k = 0; k < K; ++k) {
          const V b0 = load_vec(bp);
          const V b1 = load_vec(bp + L);
          for (int i = 0; i < kGemmMr; ++i) {
            const T a = ap[i];
            acc[i][0] += a * b0;
            acc[i][1] += a * b1;
          }
          ap += kGemmMr;
          bp += Nr;
        }
        const int rows = std::min(kGemmMr, M - p * kGemmMr);
        for (int i = 0; i < rows; ++i) {
          T* c = C + static_cast<std::size_t>(p * kGemmMr + i) * ldc + j0;
          if (cols == Nr) {
            store_vec(c, load_vec(c) + acc[i][0]);
            store_vec(c + L, load_vec(c + L) + acc[i][1]);
          } else {
            T tile[Nr];
            store_vec(tile, acc[i][0]);
            store_vec(tile + L, acc[i][1]);
            for (int j = 0; j < cols; ++j) c[j] += tile[j];
          }
        }
      }
    }
  }
}

template <typename T>
void gemm(int M, int N, int K, const T* A, int lda, const T* B, int ldb, T* C, int ldc) {
  gemm_accumulate<T>(M, N, K, A, lda, B, ldb, C, ldc);
}

// dst[cols x rows] = transpose(src[rows x cols]).
template <typename T>
void transpose(const T* src, int rows, int cols, T* dst) {
  constexpr int kBlock = 32;
  for (int r0 = 0; r0 < rows; r0 += kBlock) {
    const int r1 = std::min(rows, r0 + kBlock);
    for (int c0 = 0; c0 < cols; c0 += kBlock) {
      const int c1 = std::min(cols, c0 + kBlock);
      for (int r = r0; r < r1; ++r) {
        for (int c = c0; c < c1; ++c) {
          dst[static_cast<std::size_t>(c) * rows + r] = src[static_cast<std::size_t>(r) * cols + c];
        }
      }
    }
  }
}

}  // namespace rlfn::detail
