// Copyright (c) 2026, The clipforge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable tensor operations. Every op validates extents and throws
// DimensionError naming the offending shapes. Reductions accumulate in double.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "clipforge/rng.hpp"
#include "clipforge/tensor.hpp"

namespace clipforge {

inline constexpr float kLayerNormEps = 1e-5f;

// -- linear algebra ----------------------------------------------------------

/// a[m×k] · b[k×n]. Backward: dA = dC·Bᵀ, dB = Aᵀ·dC.
Tensor matmul(const Tensor& a, const Tensor& b);

/// x[...×in] · w[in×out] (+ bias[out]); leading extents of x are treated as rows.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias = Tensor());

/// Batched a[B×m×k] · b[B×k×n], or a · bᵀ for b[B×n×k] when transpose_b.
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);

/// 2-D transpose (copies).
Tensor transpose(const Tensor& a);

// -- elementwise -------------------------------------------------------------

/// a + b where b has a's shape or matches a's trailing extents (broadcast over leading ones).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
/// Elementwise product, same broadcasting rule as add.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float factor);
/// a · s for a one-element tensor s.
Tensor mul_scalar(const Tensor& a, const Tensor& s);
Tensor exp(const Tensor& a);
/// min(a, hi); gradient passes only where a <= hi.
Tensor clamp_max(const Tensor& a, float hi);
/// Exact (erf) GELU.
Tensor gelu(const Tensor& a);

// -- reductions --------------------------------------------------------------

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// -- shape -------------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape);

// -- normalization -----------------------------------------------------------

/// Per-row standardization over the last extent (population variance), then gain/bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps = kLayerNormEps);

/// Row-wise softmax over the last extent with max subtraction.
Tensor softmax_rows(const Tensor& x);

/// Mean over rows of -log softmax(logits)[row, target[row]] for logits[n×c].
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);

/// Rows of x[...×d] scaled to unit Euclidean norm.
Tensor l2_normalize_rows(const Tensor& x);

// -- token plumbing ----------------------------------------------------------

/// table[V×d] rows selected by ids; result has shape ids_shape + [d].
Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids, const Shape& ids_shape);

/// x[b×n×d] with token[d] inserted at position 0 of every sequence.
Tensor prepend_token(const Tensor& x, const Tensor& token);

/// Per-sequence gather: out[i][j] = x[i][index[i][j]]; all index rows must share a length.
Tensor gather_tokens(const Tensor& x, const std::vector<std::vector<std::size_t>>& index);

/// out[i] = x[i][position[i]] for x[b×n×d]; result [b×d].
Tensor select_tokens(const Tensor& x, std::span<const std::size_t> position);

/// Column block `part` of `parts` equal blocks of x[b×n×(parts·h·dh)], laid out as [(b·h)×n×dh].
Tensor split_heads(const Tensor& x, std::size_t heads, std::size_t part = 0, std::size_t parts = 1);

/// Inverse layout of split_heads: x[(b·h)×n×dh] -> [b×n×(h·dh)].
Tensor merge_heads(const Tensor& x, std::size_t heads);

/// Scores[B×n×n] with entries above the diagonal replaced by -inf.
Tensor causal_mask(const Tensor& scores);

/// Stochastic depth: zeroes whole samples of x[b×...] with probability rate, scaling survivors by 1/(1-rate).
Tensor drop_path(const Tensor& x, double rate, Rng& rng, bool training);

/// images[b×c×H×W] -> [b×n×(c·p²)] with n = (H/p)(W/p) patches in raster order, each flattened (c, row, col).
Tensor patchify(const Tensor& images, std::size_t patch_size);

}  // namespace clipforge
