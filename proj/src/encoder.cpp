// Copyright (c) 2026, The clipforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "clipforge/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "clipforge/errors.hpp"
#include "clipforge/ops.hpp"

namespace clipforge {

std::size_t MaskSpec::kept(std::size_t n_tokens) const {
  const double raw = std::ceil((1.0 - ratio) * static_cast<double>(n_tokens) - 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(raw, 0.0)), 1, std::max<std::size_t>(n_tokens, 1));
}

void MaskSpec::validate() const {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw ConfigError("mask_ratio", "must lie in [0, 1)");
}

std::vector<std::size_t> sample_mask(std::size_t n_tokens, const MaskSpec& spec, Rng& rng) {
  spec.validate();
  if (n_tokens == 0) throw InputError("sample_mask: no tokens to sample from");
  std::vector<std::size_t> idx(n_tokens);
  std::iota(idx.begin(), idx.end(), 0);
  const std::size_t keep = spec.kept(n_tokens);
  if (keep == n_tokens) return idx;
  // Partial Fisher-Yates: the first `keep` slots become a uniform subset.
  for (std::size_t i = 0; i < keep; ++i) std::swap(idx[i], idx[i + rng.below(n_tokens - i)]);
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  return idx;
}

namespace {

Tensor attention(const Tensor& h, const ParamStore& params, const std::string& prefix, std::size_t heads, bool causal) {
  const std::size_t width = h.shape().back();
  const float inv_sqrt = static_cast<float>(1.0 / std::sqrt(static_cast<double>(width / heads)));
  Tensor qkv = linear(h, params.at(prefix + "attn.qkv.weight"), params.at(prefix + "attn.qkv.bias"));
  Tensor q = scale(split_heads(qkv, heads, 0, 3), inv_sqrt);
  Tensor k = split_heads(qkv, heads, 1, 3);
  Tensor v = split_heads(qkv, heads, 2, 3);
  Tensor scores = bmm(q, k, /*transpose_b=*/true);
  if (causal) scores = causal_mask(scores);
  Tensor ctx = merge_heads(bmm(softmax_rows(scores), v), heads);
  return linear(ctx, params.at(prefix + "attn.proj.weight"), params.at(prefix + "attn.proj.bias"));
}

Tensor transformer(Tensor x, const ParamStore& params, const std::string& tower, const EncoderConfig& cfg, bool causal,
                   Rng* rng) {
  const bool training = rng != nullptr;
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    const std::string p = tower + ".blocks." + std::to_string(i) + ".";
    Tensor h = layer_norm(x, params.at(p + "norm1.gain"), params.at(p + "norm1.bias"));
    Tensor a = attention(h, params, p, cfg.heads, causal);
    if (training) a = drop_path(a, cfg.drop_path, *rng, true);
    x = add(x, a);
    h = layer_norm(x, params.at(p + "norm2.gain"), params.at(p + "norm2.bias"));
    Tensor m = linear(gelu(linear(h, params.at(p + "mlp.fc1.weight"), params.at(p + "mlp.fc1.bias"))),
                      params.at(p + "mlp.fc2.weight"), params.at(p + "mlp.fc2.bias"));
    if (training) m = drop_path(m, cfg.drop_path, *rng, true);
    x = add(x, m);
  }
  return x;
}

// Pooled features -> final norm -> projection -> unit rows. The final norm is
// row-wise, so pooling first gives the same result as normalizing every position.
EmbeddingOutput head(const Tensor& pooled, const ParamStore& params, const std::string& tower, std::size_t seq_len) {
  Tensor h = layer_norm(pooled, params.at(tower + ".norm.gain"), params.at(tower + ".norm.bias"));
  Tensor z = matmul(h, params.at(tower + ".proj"));
  return {l2_normalize_rows(z), true, seq_len};
}

}  // namespace

EmbeddingOutput encode_image(const Tensor& images, const ModelConfig& config, const ParamStore& params,
                             const std::optional<MaskSpec>& mask, Rng* rng) {
  const EncoderConfig& cfg = config.image;
  if (images.dim() != 4 || images.size(1) != cfg.channels || images.size(2) != cfg.image_size ||
      images.size(3) != cfg.image_size)
    throw DimensionError("encode_image: images " + to_string(images.shape()) + " do not match a " +
                         std::to_string(cfg.channels) + "x" + std::to_string(cfg.image_size) + "x" +
                         std::to_string(cfg.image_size) + " tower");
  if (mask && !rng) throw ContractError("encode_image: masking requires a generator (training mode)");
  check_params(config, params);

  const std::size_t batch = images.size(0);
  const std::size_t n = cfg.num_patches();
  Tensor tokens = linear(patchify(images, cfg.patch_size), params.at("visual.patch_embed.weight"),
                         params.at("visual.patch_embed.bias"));
  Tensor x = add(prepend_token(tokens, params.at("visual.class_token")), params.at("visual.pos_embed"));
  std::size_t seq = n + 1;
  if (mask) {
    std::vector<std::vector<std::size_t>> keep(batch);
    for (auto& row : keep) {
      const auto kept = sample_mask(n, *mask, *rng);
      row.reserve(kept.size() + 1);
      row.push_back(0);
      for (std::size_t k : kept) row.push_back(k + 1);
    }
    seq = keep[0].size();
    x = gather_tokens(x, keep);
  }
  x = transformer(std::move(x), params, "visual", cfg, /*causal=*/false, rng);
  const std::vector<std::size_t> cls(batch, 0);
  return head(select_tokens(x, cls), params, "visual", seq);
}

EmbeddingOutput encode_text(const TokenBatch& tokens, const ModelConfig& config, const ParamStore& params, Rng* rng) {
  const EncoderConfig& cfg = config.text;
  if (tokens.length != cfg.context_length || tokens.ids.size() != tokens.batch * tokens.length || tokens.batch == 0)
    throw DimensionError("encode_text: token batch [" + std::to_string(tokens.batch) + "x" +
                         std::to_string(tokens.length) + "] does not match context length " +
                         std::to_string(cfg.context_length));
  check_params(config, params);
  std::vector<std::size_t> eos(tokens.batch);
  for (std::size_t i = 0; i < tokens.batch; ++i) {
    const std::int32_t* row = tokens.row(i);
    const auto count = std::count(row, row + tokens.length, kEosToken);
    if (count != 1)
      throw InputError("encode_text: row " + std::to_string(i) + " has " + std::to_string(count) +
                       " end-of-sequence tokens, expected exactly one");
    eos[i] = static_cast<std::size_t>(std::find(row, row + tokens.length, kEosToken) - row);
  }
  Tensor x = add(embedding(params.at("text.token_embed"), tokens.ids, {tokens.batch, tokens.length}),
                 params.at("text.pos_embed"));
  x = transformer(std::move(x), params, "text", cfg, /*causal=*/true, rng);
  return head(select_tokens(x, eos), params, "text", tokens.length);
}

Tensor interpolate_pos_embed(const Tensor& pos, std::size_t new_grid) {
  if (pos.dim() != 2 || pos.size(0) < 2) throw DimensionError("interpolate_pos_embed: bad table " + to_string(pos.shape()));
  const std::size_t rows = pos.size(0) - 1, d = pos.size(1);
  const auto g = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(rows))));
  if (g * g != rows) throw DimensionError("interpolate_pos_embed: " + std::to_string(rows) + " grid rows do not form a square");
  if (new_grid == 0) throw DimensionError("interpolate_pos_embed: target grid must be positive");
  const std::size_t G = new_grid;
  std::vector<float> out((1 + G * G) * d);
  const float* src = pos.data().data();
  std::copy_n(src, d, out.begin());
  if (G == g) {
    std::copy(src, src + (1 + g * g) * d, out.begin());
    return Tensor::from({1 + G * G, d}, std::move(out));
  }
  const auto coord = [&](std::size_t i) {
    return G > 1 ? static_cast<double>(i) * static_cast<double>(g - 1) / static_cast<double>(G - 1) : 0.0;
  };
  const float* grid = src + d;
  for (std::size_t y = 0; y < G; ++y) {
    const double sy = coord(y);
    const std::size_t y0 = std::min(static_cast<std::size_t>(std::floor(sy)), g - 1), y1 = std::min(y0 + 1, g - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < G; ++x) {
      const double sx = coord(x);
      const std::size_t x0 = std::min(static_cast<std::size_t>(std::floor(sx)), g - 1), x1 = std::min(x0 + 1, g - 1);
      const double fx = sx - static_cast<double>(x0);
      float* dst = out.data() + (1 + y * G + x) * d;
      for (std::size_t e = 0; e < d; ++e) {
        const double top = (1 - fx) * grid[(y0 * g + x0) * d + e] + fx * grid[(y0 * g + x1) * d + e];
        const double bot = (1 - fx) * grid[(y1 * g + x0) * d + e] + fx * grid[(y1 * g + x1) * d + e];
        dst[e] = static_cast<float>((1 - fy) * top + fy * bot);
      }
    }
  }
  return Tensor::from({1 + G * G, d}, std::move(out));
}

}  // namespace clipforge
