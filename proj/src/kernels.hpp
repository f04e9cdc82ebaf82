// Copyright (c) 2026, The clipforge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Row-major float32 GEMM kernels with float64 accumulators. Internal to the library.

#pragma once

#include <cstddef>

namespace clipforge::kernels {

// C[m×n] (+)= A[m×k] · B[k×n]
void gemm_nn(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate);

// C[m×n] (+)= A[m×k] · B[n×k]ᵀ
void gemm_nt(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate);

// C[k×n] (+)= A[m×k]ᵀ · B[m×n]
void gemm_tn(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate);

}  // namespace clipforge::kernels
