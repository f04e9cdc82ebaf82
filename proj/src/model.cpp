// Copyright (c) 2026, The clipforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "clipforge/model.hpp"

#include <cmath>

#include "clipforge/errors.hpp"
#include "clipforge/tokenizer.hpp"

namespace clipforge {

void EncoderConfig::validate_image() const {
  if (width == 0 || heads == 0) throw ConfigError("image.width", "width and heads must be positive");
  if (width % heads != 0) throw ConfigError("image.heads", "width " + std::to_string(width) + " is not divisible by " + std::to_string(heads) + " heads");
  if (patch_size == 0 || image_size == 0) throw ConfigError("image.patch_size", "image and patch size must be positive");
  if (image_size % patch_size != 0)
    throw ConfigError("image.patch_size", "image size " + std::to_string(image_size) + " is not divisible by patch size " + std::to_string(patch_size));
  if (channels == 0) throw ConfigError("image.channels", "must be positive");
  if (mlp_ratio == 0) throw ConfigError("image.mlp_ratio", "must be positive");
  if (drop_path < 0.0 || drop_path >= 1.0) throw ConfigError("image.drop_path", "must lie in [0, 1)");
}

void EncoderConfig::validate_text() const {
  if (width == 0 || heads == 0) throw ConfigError("text.width", "width and heads must be positive");
  if (width % heads != 0) throw ConfigError("text.heads", "width " + std::to_string(width) + " is not divisible by " + std::to_string(heads) + " heads");
  if (vocab_size == 0) throw ConfigError("text.vocab_size", "must be positive");
  if (context_length < 2) throw ConfigError("text.context_length", "must hold at least BOS and EOS");
  if (mlp_ratio == 0) throw ConfigError("text.mlp_ratio", "must be positive");
  if (drop_path < 0.0 || drop_path >= 1.0) throw ConfigError("text.drop_path", "must lie in [0, 1)");
}

void ModelConfig::validate() const {
  image.validate_image();
  text.validate_text();
  if (!(max_log_scale > 0.0)) throw ConfigError("max_log_scale", "must be positive");
}

namespace presets {

namespace {
EncoderConfig vit(std::size_t layers, std::size_t width, std::size_t heads, std::size_t image, std::size_t patch) {
  EncoderConfig c;
  c.layers = layers;
  c.width = width;
  c.heads = heads;
  c.image_size = image;
  c.patch_size = patch;
  return c;
}
EncoderConfig text_tower(std::size_t layers, std::size_t width, std::size_t heads, std::size_t vocab, std::size_t ctx) {
  EncoderConfig c;
  c.layers = layers;
  c.width = width;
  c.heads = heads;
  c.vocab_size = vocab;
  c.context_length = ctx;
  return c;
}
}  // namespace

ModelConfig b16() { return {vit(12, 768, 12, 224, 16), text_tower(12, 512, 8, 49408, 77)}; }
ModelConfig l14() { return {vit(24, 1024, 16, 224, 14), text_tower(12, 768, 12, 49408, 77)}; }
ModelConfig l14_336() { return {vit(24, 1024, 16, 336, 14), text_tower(12, 768, 12, 49408, 77)}; }
ModelConfig b16_shrunk(std::size_t image_size, std::size_t patch_size) {
  return {vit(2, 64, 2, image_size, patch_size), text_tower(2, 64, 2, kVocabSize, kDefaultContextLength)};
}

}  // namespace presets

Tensor& ParamStore::add(const std::string& name, Tensor t) {
  if (contains(name)) throw ContractError("duplicate parameter '" + name + "'");
  index_[name] = entries_.size();
  entries_.emplace_back(name, std::move(t));
  return entries_.back().second;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ShapeError("missing parameter '" + name + "'");
  return entries_[it->second].second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ShapeError("missing parameter '" + name + "'");
  return entries_[it->second].second;
}

std::size_t ParamStore::total_elements() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

namespace {

void block_shapes(std::vector<std::pair<std::string, Shape>>& out, const std::string& prefix, const EncoderConfig& c) {
  const std::size_t w = c.width, hidden = c.mlp_ratio * c.width;
  for (std::size_t i = 0; i < c.layers; ++i) {
    const std::string b = prefix + ".blocks." + std::to_string(i) + ".";
    out.push_back({b + "norm1.gain", {w}});
    out.push_back({b + "norm1.bias", {w}});
    out.push_back({b + "attn.qkv.weight", {w, 3 * w}});
    out.push_back({b + "attn.qkv.bias", {3 * w}});
    out.push_back({b + "attn.proj.weight", {w, w}});
    out.push_back({b + "attn.proj.bias", {w}});
    out.push_back({b + "norm2.gain", {w}});
    out.push_back({b + "norm2.bias", {w}});
    out.push_back({b + "mlp.fc1.weight", {w, hidden}});
    out.push_back({b + "mlp.fc1.bias", {hidden}});
    out.push_back({b + "mlp.fc2.weight", {hidden, w}});
    out.push_back({b + "mlp.fc2.bias", {w}});
  }
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

}  // namespace

std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelConfig& config) {
  const EncoderConfig& im = config.image;
  const EncoderConfig& tx = config.text;
  const std::size_t e = config.resolved_embed_dim();
  std::vector<std::pair<std::string, Shape>> out;
  out.push_back({"visual.patch_embed.weight", {im.patch_dim(), im.width}});
  out.push_back({"visual.patch_embed.bias", {im.width}});
  out.push_back({"visual.class_token", {im.width}});
  out.push_back({"visual.pos_embed", {1 + im.num_patches(), im.width}});
  block_shapes(out, "visual", im);
  out.push_back({"visual.norm.gain", {im.width}});
  out.push_back({"visual.norm.bias", {im.width}});
  out.push_back({"visual.proj", {im.width, e}});

  out.push_back({"text.token_embed", {tx.vocab_size, tx.width}});
  out.push_back({"text.pos_embed", {tx.context_length, tx.width}});
  block_shapes(out, "text", tx);
  out.push_back({"text.norm.gain", {tx.width}});
  out.push_back({"text.norm.bias", {tx.width}});
  out.push_back({"text.proj", {tx.width, e}});

  out.push_back({"logit_scale", {1}});
  return out;
}

Tensor init_param(const std::string& name, const Shape& shape, const ModelConfig& config, Rng& rng) {
  if (name == "logit_scale") return Tensor::scalar(static_cast<float>(config.init_log_scale), true);
  if (ends_with(name, ".gain")) return Tensor::full(shape, 1.0f, true);
  if (ends_with(name, ".bias")) return Tensor::zeros(shape, true);
  double stddev = 0.02;
  if (ends_with(name, "pos_embed")) stddev = 0.01;
  if (ends_with(name, ".proj")) stddev = 1.0 / std::sqrt(static_cast<double>(shape[0]));
  std::vector<float> v(numel(shape));
  for (float& x : v) x = static_cast<float>(stddev * rng.normal());
  return Tensor::from(shape, std::move(v), true);
}

ParamStore init_params(const ModelConfig& config, Rng& rng) {
  config.validate();
  ParamStore store;
  for (const auto& [name, shape] : parameter_shapes(config)) store.add(name, init_param(name, shape, config, rng));
  return store;
}

void check_params(const ModelConfig& config, const ParamStore& params) {
  for (const auto& [name, shape] : parameter_shapes(config)) {
    const Tensor& t = params.at(name);
    if (t.shape() != shape)
      throw ShapeError("parameter '" + name + "' has shape " + to_string(t.shape()) + ", config expects " + to_string(shape));
  }
}

ParamCount count_params(const ModelConfig& config) {
  ParamCount c;
  for (const auto& [name, shape] : parameter_shapes(config)) {
    const std::string tower = param_tower(name);
    if (tower == "visual")
      c.image += numel(shape);
    else if (tower == "text")
      c.text += numel(shape);
    c.total += numel(shape);
  }
  return c;
}

std::size_t param_depth(const std::string& name, std::size_t num_layers) {
  const auto pos = name.find(".blocks.");
  if (pos != std::string::npos) {
    const std::size_t start = pos + 8;
    const std::size_t stop = name.find('.', start);
    return static_cast<std::size_t>(std::stoul(name.substr(start, stop - start))) + 1;
  }
  if (ends_with(name, "patch_embed.weight") || ends_with(name, "patch_embed.bias") || ends_with(name, "class_token") ||
      ends_with(name, "pos_embed") || ends_with(name, "token_embed"))
    return 0;
  return num_layers + 1;
}

bool is_decay_exempt(const std::string& name) {
  return ends_with(name, ".bias") || ends_with(name, ".gain") || name == "logit_scale";
}

std::string param_tower(const std::string& name) {
  if (starts_with(name, "visual.")) return "visual";
  if (starts_with(name, "text.")) return "text";
  return name;
}

}  // namespace clipforge
