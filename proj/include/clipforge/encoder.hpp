// Copyright (c) 2026, The clipforge Authors
// SPDX-License-Identifier: Apache-2.0
//
// ViT image tower with random patch-token masking, causal text tower, and
// positional-table resampling for resolution changes.

#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "clipforge/model.hpp"
#include "clipforge/rng.hpp"
#include "clipforge/tensor.hpp"
#include "clipforge/tokenizer.hpp"

namespace clipforge {

struct MaskSpec {
  /// Fraction of patch tokens dropped, in [0, 1).
  double ratio = 0.5;
  /// The class token is never masked; kept for completeness of the record.
  bool keep_special = true;

  /// ceil((1 - ratio) * n), at least 1.
  std::size_t kept(std::size_t n_tokens) const;
  void validate() const;
};

struct EmbeddingOutput {
  Tensor vector;  // [batch × embed_dim]
  bool normalized = false;
  /// Token positions each sequence carried through the transformer blocks.
  std::size_t sequence_length = 0;
};

/// Sorted patch indices kept for one image. Identity when ratio is 0; otherwise a
/// uniform subset without replacement drawn from rng.
std::vector<std::size_t> sample_mask(std::size_t n_tokens, const MaskSpec& spec, Rng& rng);

/// Image tower forward. Supplying `mask` selects training mode and requires `rng`;
/// masks are sampled independently per image. Without a mask the pass is
/// deterministic and touches no randomness.
EmbeddingOutput encode_image(const Tensor& images, const ModelConfig& config, const ParamStore& params,
                             const std::optional<MaskSpec>& mask = std::nullopt, Rng* rng = nullptr);

/// Text tower forward with causal attention, pooled at each row's single EOS token.
/// `rng` enables training-mode stochastic depth when the config asks for it.
EmbeddingOutput encode_text(const TokenBatch& tokens, const ModelConfig& config, const ParamStore& params,
                            Rng* rng = nullptr);

/// Resamples a [(1+g²)×d] positional table to [(1+G²)×d]. Row 0 (class token) is
/// copied; the grid is resampled bilinearly with corner-aligned sample points.
Tensor interpolate_pos_embed(const Tensor& pos, std::size_t new_grid);

}  // namespace clipforge
