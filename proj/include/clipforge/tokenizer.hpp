// Copyright (c) 2026, The clipforge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Byte-level tokenizer: ids 0-255 are raw bytes, followed by three specials.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace clipforge {

inline constexpr std::int32_t kPadToken = 256;
inline constexpr std::int32_t kBosToken = 257;
inline constexpr std::int32_t kEosToken = 258;
inline constexpr std::size_t kVocabSize = 259;
inline constexpr std::size_t kDefaultContextLength = 32;

struct TokenizerSpec {
  std::size_t context_length = kDefaultContextLength;
};

/// BOS + bytes + EOS, bytes truncated to context_length - 2, PAD-filled to context_length.
std::vector<std::int32_t> tokenize(std::string_view caption, const TokenizerSpec& spec = {});

/// Bytes between BOS and EOS; specials are dropped.
std::string detokenize(const std::vector<std::int32_t>& ids);

/// Row-major [batch × context_length] id matrix.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<std::int32_t> ids;

  const std::int32_t* row(std::size_t i) const { return ids.data() + i * length; }
};

TokenBatch tokenize_batch(const std::vector<std::string>& captions, const TokenizerSpec& spec = {});

}  // namespace clipforge
