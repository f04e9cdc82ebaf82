// Copyright (c) 2026, The clipforge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Symmetric image-text InfoNCE with a learnable, clamped temperature.

#pragma once

#include "clipforge/encoder.hpp"
#include "clipforge/model.hpp"
#include "clipforge/tensor.hpp"

namespace clipforge {

/// Handle to the learnable log-temperature. Shares storage with the parameter it wraps.
struct LogitScale {
  Tensor log_scale;  // one element
  double max_log_scale = kDefaultMaxLogScale;

  /// exp(min(log_scale, max_log_scale))
  double effective() const;

  static LogitScale from(ParamStore& params, const ModelConfig& config) {
    return {params.at("logit_scale"), config.max_log_scale};
  }
};

/// logits[i][j] = scale · <img_i, txt_j>. Both inputs must be unit-normalized.
Tensor similarity_logits(const EmbeddingOutput& img, const EmbeddingOutput& txt, const LogitScale& scale);

/// 0.5 · (row cross-entropy + column cross-entropy) with the diagonal as targets, averaged over the batch.
Tensor clip_loss(const Tensor& logits);

/// log_scale <- min(log_scale, max_log_scale), in place.
void clamp_scale(LogitScale& scale);

}  // namespace clipforge
