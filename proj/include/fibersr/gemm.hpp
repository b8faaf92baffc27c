#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

namespace fibersr::kernels {

// C(MxN) = A(MxK) * op(B) (+ C when accumulate). A is row-major with leading
// dimension lda. op(B) is B(KxN) row-major with ldb, or, when b_transposed,
// the transpose of a row-major (NxK) B. The reduction order of every C
// element depends only on (M, K), never on the element's column, so results
// are reproducible bit-for-bit for a given build.

template <class T>
inline constexpr int panel_width = 64 / static_cast<int>(sizeof(T)) * 2;

template <class T>
inline constexpr int row_block = 8;

template <int MR, int NR, class T>
inline void micro_kernel(int K, const T* a, int lda, const T* panel, T* acc_out) {
  T acc[MR][NR] = {};
  for (int k = 0; k < K; ++k) {
    const T* b = panel + static_cast<std::size_t>(k) * NR;
#pragma GCC unroll 8
    for (int r = 0; r < MR; ++r) {
      const T av = a[static_cast<std::size_t>(r) * lda + k];
#pragma GCC ivdep
      for (int c = 0; c < NR; ++c) acc[r][c] += av * b[c];
    }
  }
  for (int r = 0; r < MR; ++r)
    for (int c = 0; c < NR; ++c) acc_out[r * NR + c] = acc[r][c];
}

template <class T>
inline void pack_panel(int K, int n0, int cols, const T* B, int ldb, bool b_transposed, T* panel) {
  constexpr int NR = panel_width<T>;
  if (!b_transposed) {
    for (int k = 0; k < K; ++k) {
      const T* src = B + static_cast<std::size_t>(k) * ldb + n0;
      T* dst = panel + static_cast<std::size_t>(k) * NR;
      int c = 0;
      for (; c < cols; ++c) dst[c] = src[c];
      for (; c < NR; ++c) dst[c] = T(0);
    }
  } else {
    for (int c = 0; c < NR; ++c) {
      if (c < cols) {
        const T* src = B + static_cast<std::size_t>(n0 + c) * ldb;
        for (int k = 0; k < K; ++k) panel[static_cast<std::size_t>(k) * NR + c] = src[k];
      } else {
        for (int k = 0; k < K; ++k) panel[static_cast<std::size_t>(k) * NR + c] = T(0);
      }
    }
  }
}

// Few output rows: packing does not pay off. The non-transposed case is a
// row axpy; the transposed case is a set of dot products with fixed
// 16-lane partial sums.
template <class T>
inline void small_m_gemm(int M, int N, int K, const T* A, int lda, const T* B, int ldb, bool b_transposed, T* C,
                         int ldc, bool accumulate) {
  if (!b_transposed) {
    thread_local std::vector<T> row;
    row.resize(static_cast<std::size_t>(N));
    for (int i = 0; i < M; ++i) {
      std::fill(row.begin(), row.end(), T(0));
      const T* a = A + static_cast<std::size_t>(i) * lda;
      T* acc = row.data();
      for (int k = 0; k < K; ++k) {
        const T av = a[k];
        const T* b = B + static_cast<std::size_t>(k) * ldb;
#pragma GCC ivdep
        for (int j = 0; j < N; ++j) acc[j] += av * b[j];
      }
      T* c = C + static_cast<std::size_t>(i) * ldc;
      if (accumulate)
        for (int j = 0; j < N; ++j) c[j] += acc[j];
      else
        for (int j = 0; j < N; ++j) c[j] = acc[j];
    }
    return;
  }
  constexpr int L = 16;
  const int kmain = K - K % L;
  for (int i = 0; i < M; ++i) {
    const T* a = A + static_cast<std::size_t>(i) * lda;
    for (int j = 0; j < N; ++j) {
      const T* b = B + static_cast<std::size_t>(j) * ldb;
      T lanes[L] = {};
      for (int k = 0; k < kmain; k += L)
#pragma GCC ivdep
        for (int l = 0; l < L; ++l) lanes[l] += a[k + l] * b[k + l];
      T sum = T(0);
      for (int l = 0; l < L; ++l) sum += lanes[l];
      for (int k = kmain; k < K; ++k) sum += a[k] * b[k];
      T& c = C[static_cast<std::size_t>(i) * ldc + j];
      c = accumulate ? c + sum : sum;
    }
  }
}

template <class T>
inline void gemm(int M, int N, int K, const T* A, int lda, const T* B, int ldb, bool b_transposed, T* C, int ldc,
                 bool accumulate) {
  constexpr int NR = panel_width<T>;
  constexpr int MR = row_block<T>;
  if (M <= 0 || N <= 0) return;
  if (K <= 0) {
    if (!accumulate)
      for (int i = 0; i < M; ++i) std::fill_n(C + static_cast<std::size_t>(i) * ldc, N, T(0));
    return;
  }
  if (M < MR) {
    small_m_gemm(M, N, K, A, lda, B, ldb, b_transposed, C, ldc, accumulate);
    return;
  }
  constexpr int KC = 256;
  thread_local std::vector<T> panel;
  panel.resize(static_cast<std::size_t>(std::min(K, KC)) * NR);
  T tile[MR * NR];

  for (int n0 = 0; n0 < N; n0 += NR) {
    const int cols = std::min(NR, N - n0);
    for (int k0 = 0; k0 < K; k0 += KC) {
      const int kc = std::min(KC, K - k0);
      const T* b = b_transposed ? B + k0 : B + static_cast<std::size_t>(k0) * ldb;
      pack_panel(kc, n0, cols, b, ldb, b_transposed, panel.data());
      const bool add = accumulate || k0 > 0;
      int i0 = 0;
      auto store = [&](int rows) {
        for (int r = 0; r < rows; ++r) {
          T* c = C + static_cast<std::size_t>(i0 + r) * ldc + n0;
          const T* t = tile + r * NR;
          if (add)
            for (int j = 0; j < cols; ++j) c[j] += t[j];
          else
            for (int j = 0; j < cols; ++j) c[j] = t[j];
        }
      };
      const T* a = A + k0;
      for (; i0 + MR <= M; i0 += MR) {
        micro_kernel<MR, NR>(kc, a + static_cast<std::size_t>(i0) * lda, lda, panel.data(), tile);
        store(MR);
      }
      for (; i0 < M; ++i0) {
        micro_kernel<1, NR>(kc, a + static_cast<std::size_t>(i0) * lda, lda, panel.data(), tile);
        store(1);
      }
    }
  }
}

}  // namespace fibersr::kernels
