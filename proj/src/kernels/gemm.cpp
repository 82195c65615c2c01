#include <algorithm>
#include <cstring>
#include <vector>

#include "helio/kernels.hpp"

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

namespace helio::kernels {
namespace {

constexpr std::size_t kMR = 6;
constexpr std::size_t kNR = 32;
constexpr std::size_t kKC = 256;
constexpr std::size_t kMC = 96;
constexpr std::size_t kNC = 2048;

inline float load_a(Trans t, const float* a, std::size_t lda, std::size_t i, std::size_t p) {
  return t == Trans::No ? a[i * lda + p] : a[p * lda + i];
}

// Panels of kMR rows, k-major inside a panel; rows past m are zero.
void pack_a(Trans t, const float* a, std::size_t lda, std::size_t i0, std::size_t mc,
            std::size_t p0, std::size_t kc, float* dst) {
  for (std::size_t ir = 0; ir < mc; ir += kMR) {
    const std::size_t rows = std::min(kMR, mc - ir);
    for (std::size_t p = 0; p < kc; ++p) {
      std::size_t r = 0;
      for (; r < rows; ++r) dst[r] = load_a(t, a, lda, i0 + ir + r, p0 + p);
      for (; r < kMR; ++r) dst[r] = 0.0f;
      dst += kMR;
    }
  }
}

// Panels of kNR columns, k-major inside a panel; columns past n are zero.
void pack_b(Trans t, const float* b, std::size_t ldb, std::size_t p0, std::size_t kc,
            std::size_t j0, std::size_t nc, float* dst) {
  for (std::size_t jr = 0; jr < nc; jr += kNR) {
    const std::size_t cols = std::min(kNR, nc - jr);
    for (std::size_t p = 0; p < kc; ++p) {
      if (t == Trans::No) {
        const float* src = b + (p0 + p) * ldb + j0 + jr;
        std::memcpy(dst, src, cols * sizeof(float));
        for (std::size_t c = cols; c < kNR; ++c) dst[c] = 0.0f;
      } else {
        std::size_t c = 0;
        for (; c < cols; ++c) dst[c] = b[(j0 + jr + c) * ldb + p0 + p];
        for (; c < kNR; ++c) dst[c] = 0.0f;
      }
      dst += kNR;
    }
  }
}

// tile (kMR x kNR, contiguous) = Ap * Bp over kc.
inline void micro_kernel(std::size_t kc, const float* ap, const float* bp, float* tile) {
#if defined(__AVX512F__)
  __m512 c00 = _mm512_setzero_ps(), c01 = _mm512_setzero_ps();
  __m512 c10 = _mm512_setzero_ps(), c11 = _mm512_setzero_ps();
  __m512 c20 = _mm512_setzero_ps(), c21 = _mm512_setzero_ps();
  __m512 c30 = _mm512_setzero_ps(), c31 = _mm512_setzero_ps();
  __m512 c40 = _mm512_setzero_ps(), c41 = _mm512_setzero_ps();
  __m512 c50 = _mm512_setzero_ps(), c51 = _mm512_setzero_ps();
  for (std::size_t p = 0; p < kc; ++p) {
    const __m512 b0 = _mm512_loadu_ps(bp);
    const __m512 b1 = _mm512_loadu_ps(bp + 16);
    __m512 a = _mm512_set1_ps(ap[0]);
    c00 = _mm512_fmadd_ps(a, b0, c00);
    c01 = _mm512_fmadd_ps(a, b1, c01);
    a = _mm512_set1_ps(ap[1]);
    c10 = _mm512_fmadd_ps(a, b0, c10);
    c11 = _mm512_fmadd_ps(a, b1, c11);
    a = _mm512_set1_ps(ap[2]);
    c20 = _mm512_fmadd_ps(a, b0, c20);
    c21 = _mm512_fmadd_ps(a, b1, c21);
    a = _mm512_set1_ps(ap[3]);
    c30 = _mm512_fmadd_ps(a, b0, c30);
    c31 = _mm512_fmadd_ps(a, b1, c31);
    a = _mm512_set1_ps(ap[4]);
    c40 = _mm512_fmadd_ps(a, b0, c40);
    c41 = _mm512_fmadd_ps(a, b1, c41);
    a = _mm512_set1_ps(ap[5]);
    c50 = _mm512_fmadd_ps(a, b0, c50);
    c51 = _mm512_fmadd_ps(a, b1, c51);
    ap += kMR;
    bp += kNR;
  }
  _mm512_storeu_ps(tile + 0 * kNR, c00);
  _mm512_storeu_ps(tile + 0 * kNR + 16, c01);
  _mm512_storeu_ps(tile + 1 * kNR, c10);
  _mm512_storeu_ps(tile + 1 * kNR + 16, c11);
  _mm512_storeu_ps(tile + 2 * kNR, c20);
  _mm512_storeu_ps(tile + 2 * kNR + 16, c21);
  _mm512_storeu_ps(tile + 3 * kNR, c30);
  _mm512_storeu_ps(tile + 3 * kNR + 16, c31);
  _mm512_storeu_ps(tile + 4 * kNR, c40);
  _mm512_storeu_ps(tile + 4 * kNR + 16, c41);
  _mm512_storeu_ps(tile + 5 * kNR, c50);
  _mm512_storeu_ps(tile + 5 * kNR + 16, c51);
#else
  float acc[kMR][kNR] = {};
  for (std::size_t p = 0; p < kc; ++p) {
    for (std::size_t r = 0; r < kMR; ++r) {
      const float ar = ap[r];
#pragma omp simd
      for (std::size_t c = 0; c < kNR; ++c) acc[r][c] += ar * bp[c];
    }
    ap += kMR;
    bp += kNR;
  }
  std::memcpy(tile, acc, sizeof(acc));
#endif
}

}  // namespace

void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k,
          const float* a, std::size_t lda, const float* b, std::size_t ldb, float beta, float* c,
          std::size_t ldc) {
  if (m == 0 || n == 0) return;
  if (beta == 0.0f) {
    for (std::size_t i = 0; i < m; ++i) std::fill_n(c + i * ldc, n, 0.0f);
  } else if (beta != 1.0f) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) c[i * ldc + j] *= beta;
    }
  }
  if (k == 0) return;

  const std::size_t nc_max = std::min(kNC, (n + kNR - 1) / kNR * kNR);
  std::vector<float> packed_b(kKC * nc_max);

  for (std::size_t jc = 0; jc < n; jc += kNC) {
    const std::size_t nc = std::min(kNC, n - jc);
    for (std::size_t pc = 0; pc < k; pc += kKC) {
      const std::size_t kc = std::min(kKC, k - pc);
      pack_b(trans_b, b, ldb, pc, kc, jc, nc, packed_b.data());
      const std::size_t m_blocks = (m + kMC - 1) / kMC;

#pragma omp parallel
      {
        std::vector<float> packed_a(kMC * kKC);
        alignas(64) float tile[kMR * kNR];
#pragma omp for schedule(static)
        for (std::size_t blk = 0; blk < m_blocks; ++blk) {
          const std::size_t ic = blk * kMC;
          const std::size_t mc = std::min(kMC, m - ic);
          pack_a(trans_a, a, lda, ic, mc, pc, kc, packed_a.data());
          for (std::size_t jr = 0; jr < nc; jr += kNR) {
            const std::size_t cols = std::min(kNR, nc - jr);
            const float* bp = packed_b.data() + (jr / kNR) * kc * kNR;
            for (std::size_t ir = 0; ir < mc; ir += kMR) {
              const std::size_t rows = std::min(kMR, mc - ir);
              micro_kernel(kc, packed_a.data() + (ir / kMR) * kc * kMR, bp, tile);
              for (std::size_t r = 0; r < rows; ++r) {
                float* crow = c + (ic + ir + r) * ldc + jc + jr;
                const float* trow = tile + r * kNR;
#pragma omp simd
                for (std::size_t q = 0; q < cols; ++q) crow[q] += trow[q];
              }
            }
          }
        }
      }
    }
  }
}

namespace reference {

void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k,
          const float* a, std::size_t lda, const float* b, std::size_t ldb, float beta, float* c,
          std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        const float av = trans_a == Trans::No ? a[i * lda + p] : a[p * lda + i];
        const float bv = trans_b == Trans::No ? b[p * ldb + j] : b[j * ldb + p];
        acc += static_cast<double>(av) * bv;
      }
      const float prev = beta == 0.0f ? 0.0f : beta * c[i * ldc + j];
      c[i * ldc + j] = prev + static_cast<float>(acc);
    }
  }
}

}  // namespace reference
}  // namespace helio::kernels
