// Copyright (c) 2026, The clipforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "kernels.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

namespace clipforge::kernels {

namespace {

constexpr std::size_t kMr = 6;
constexpr std::size_t kNr = 16;

// C[M×N] (+)= A'·B where A'(i, p) = a[i*rs + p*cs] and B is row-major [K×N].
// Every output element sums its K products in ascending p order in double, so the
// result does not depend on how the loops are blocked.
typedef float v8f __attribute__((vector_size(32)));
typedef double v8d __attribute__((vector_size(64)));

inline v8d load_widen(const float* p) {
  v8f v;
  std::memcpy(&v, p, sizeof v);
  return __builtin_convertvector(v, v8d);
}

inline void store_narrow(float* p, v8d v) {
  const v8f f = __builtin_convertvector(v, v8f);
  std::memcpy(p, &f, sizeof f);
}

template <std::size_t R>
inline void micro(const float* a, std::size_t rs, std::size_t cs, const float* b, std::size_t n, float* c,
                  std::size_t K, bool accumulate) {
  v8d acc[R][2];
  for (std::size_t r = 0; r < R; ++r) {
    if (accumulate) {
      acc[r][0] = load_widen(c + r * n);
      acc[r][1] = load_widen(c + r * n + 8);
    } else {
      acc[r][0] = v8d{};
      acc[r][1] = v8d{};
    }
  }
  for (std::size_t p = 0; p < K; ++p) {
    const v8d b0 = load_widen(b + p * n), b1 = load_widen(b + p * n + 8);
    for (std::size_t r = 0; r < R; ++r) {
      const double s = a[r * rs + p * cs];
      acc[r][0] += s * b0;
      acc[r][1] += s * b1;
    }
  }
  for (std::size_t r = 0; r < R; ++r) {
    store_narrow(c + r * n, acc[r][0]);
    store_narrow(c + r * n + 8, acc[r][1]);
  }
}

// Ragged edge: any rows, any width below kNr.
void edge(const float* a, std::size_t rs, std::size_t cs, const float* b, std::size_t n, float* c, std::size_t rows,
          std::size_t width, std::size_t K, bool accumulate) {
  double acc[kNr];
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < width; ++j) acc[j] = accumulate ? static_cast<double>(c[r * n + j]) : 0.0;
    for (std::size_t p = 0; p < K; ++p) {
      const double s = a[r * rs + p * cs];
      const float* bp = b + p * n;
      for (std::size_t j = 0; j < width; ++j) acc[j] += s * static_cast<double>(bp[j]);
    }
    for (std::size_t j = 0; j < width; ++j) c[r * n + j] = static_cast<float>(acc[j]);
  }
}

void gemm_strided(const float* a, std::size_t rs, std::size_t cs, const float* b, float* c, std::size_t M,
                  std::size_t K, std::size_t N, bool accumulate) {
  for (std::size_t j0 = 0; j0 < N; j0 += kNr) {
    const std::size_t w = std::min(kNr, N - j0);
    std::size_t i0 = 0;
    if (w == kNr) {
      for (; i0 + kMr <= M; i0 += kMr)
        micro<kMr>(a + i0 * rs, rs, cs, b + j0, N, c + i0 * N + j0, K, accumulate);
      for (; i0 + 2 <= M; i0 += 2) micro<2>(a + i0 * rs, rs, cs, b + j0, N, c + i0 * N + j0, K, accumulate);
    }
    if (i0 < M) edge(a + i0 * rs, rs, cs, b + j0, N, c + i0 * N + j0, M - i0, w, K, accumulate);
  }
}

void transpose(const float* src, float* dst, std::size_t rows, std::size_t cols) {
  constexpr std::size_t kTile = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kTile)
    for (std::size_t c0 = 0; c0 < cols; c0 += kTile) {
      const std::size_t r1 = std::min(rows, r0 + kTile), c1 = std::min(cols, c0 + kTile);
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t cc = c0; cc < c1; ++cc) dst[cc * rows + r] = src[r * cols + cc];
    }
}

}  // namespace

void gemm_nn(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  gemm_strided(a, k, 1, b, c, m, k, n, accumulate);
}

void gemm_nt(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  std::vector<float> bt(k * n);
  transpose(b, bt.data(), n, k);
  gemm_strided(a, k, 1, bt.data(), c, m, k, n, accumulate);
}

void gemm_tn(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  gemm_strided(a, 1, k, b, c, k, m, n, accumulate);
}

}  // namespace clipforge::kernels
