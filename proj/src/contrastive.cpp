// Copyright (c) 2026, The clipforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "clipforge/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "clipforge/errors.hpp"
#include "clipforge/ops.hpp"

namespace clipforge {

namespace {

void require_unit_rows(const EmbeddingOutput& e, const char* which) {
  if (!e.normalized) throw ContractError(std::string("similarity_logits: ") + which + " embeddings are not normalized");
  const std::size_t d = e.vector.shape().back();
  const auto v = e.vector.data();
  for (std::size_t r = 0; r < v.size() / d; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += static_cast<double>(v[r * d + j]) * v[r * d + j];
    if (std::abs(std::sqrt(ss) - 1.0) > 1e-3)
      throw ContractError(std::string("similarity_logits: ") + which + " row " + std::to_string(r) + " has norm " +
                          std::to_string(std::sqrt(ss)));
  }
}

}  // namespace

double LogitScale::effective() const { return std::exp(std::min<double>(log_scale.item(), max_log_scale)); }

Tensor similarity_logits(const EmbeddingOutput& img, const EmbeddingOutput& txt, const LogitScale& scale) {
  if (img.vector.dim() != 2 || txt.vector.dim() != 2 || img.vector.shape() != txt.vector.shape())
    throw DimensionError("similarity_logits: image " + to_string(img.vector.shape()) + " vs text " +
                         to_string(txt.vector.shape()));
  require_unit_rows(img, "image");
  require_unit_rows(txt, "text");
  Tensor s = exp(clamp_max(scale.log_scale, static_cast<float>(scale.max_log_scale)));
  return mul_scalar(matmul(img.vector, transpose(txt.vector)), s);
}

Tensor clip_loss(const Tensor& logits) {
  if (logits.dim() != 2 || logits.size(0) != logits.size(1))
    throw DimensionError("clip_loss: logits must be square, got " + to_string(logits.shape()));
  std::vector<std::size_t> diag(logits.size(0));
  std::iota(diag.begin(), diag.end(), 0);
  Tensor rows = cross_entropy(logits, diag);
  Tensor cols = cross_entropy(transpose(logits), diag);
  return scale(add(rows, cols), 0.5f);
}

void clamp_scale(LogitScale& scale) {
  float& v = scale.log_scale.mutable_data()[0];
  v = std::min(v, static_cast<float>(scale.max_log_scale));
}

}  // namespace clipforge
