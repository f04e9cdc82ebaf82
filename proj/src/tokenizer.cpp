// Copyright (c) 2026, The clipforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "clipforge/tokenizer.hpp"

#include <algorithm>

#include "clipforge/errors.hpp"

namespace clipforge {

std::vector<std::int32_t> tokenize(std::string_view caption, const TokenizerSpec& spec) {
  if (spec.context_length < 2) throw ConfigError("context_length", "must hold at least BOS and EOS");
  const std::size_t keep = std::min(caption.size(), spec.context_length - 2);
  std::vector<std::int32_t> ids(spec.context_length, kPadToken);
  ids[0] = kBosToken;
  for (std::size_t i = 0; i < keep; ++i) ids[i + 1] = static_cast<unsigned char>(caption[i]);
  ids[keep + 1] = kEosToken;
  return ids;
}

std::string detokenize(const std::vector<std::int32_t>& ids) {
  std::string out;
  for (std::int32_t id : ids) {
    if (id == kEosToken) break;
    if (id >= 0 && id < 256) out.push_back(static_cast<char>(id));
  }
  return out;
}

TokenBatch tokenize_batch(const std::vector<std::string>& captions, const TokenizerSpec& spec) {
  TokenBatch batch;
  batch.batch = captions.size();
  batch.length = spec.context_length;
  batch.ids.reserve(captions.size() * spec.context_length);
  for (const std::string& c : captions) {
    const auto row = tokenize(c, spec);
    batch.ids.insert(batch.ids.end(), row.begin(), row.end());
  }
  return batch;
}

}  // namespace clipforge
