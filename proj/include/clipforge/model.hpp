// Copyright (c) 2026, The clipforge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Architecture configuration and the named parameter store of a dual-encoder model.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "clipforge/rng.hpp"
#include "clipforge/tensor.hpp"

namespace clipforge {

/// One transformer tower. Image towers use image_size/patch_size/channels,
/// text towers use vocab_size/context_length.
struct EncoderConfig {
  std::size_t layers = 0;
  std::size_t width = 0;
  std::size_t heads = 1;
  std::size_t mlp_ratio = 4;
  // image
  std::size_t image_size = 0;
  std::size_t patch_size = 0;
  std::size_t channels = 3;
  // text
  std::size_t vocab_size = 0;
  std::size_t context_length = 0;
  double drop_path = 0.0;

  std::size_t grid() const { return patch_size ? image_size / patch_size : 0; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t patch_dim() const { return channels * patch_size * patch_size; }

  void validate_image() const;
  void validate_text() const;

  bool operator==(const EncoderConfig&) const = default;
};

inline constexpr double kDefaultInitLogScale = 2.659260036932778;  // ln(1 / 0.07)
inline const double kDefaultMaxLogScale = std::log(100.0);

struct ModelConfig {
  EncoderConfig image;
  EncoderConfig text;
  /// Shared embedding dimension; 0 means "text width".
  std::size_t embed_dim = 0;
  double init_log_scale = kDefaultInitLogScale;
  double max_log_scale = kDefaultMaxLogScale;

  std::size_t resolved_embed_dim() const { return embed_dim ? embed_dim : text.width; }
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

/// Architecture presets (layers/width/heads per tower). Text towers use the
/// 49408-token BPE vocabulary and 77-token context of the checkpoints they mirror.
namespace presets {
ModelConfig b16();
ModelConfig l14();
/// L/14 continued at 336² input.
ModelConfig l14_336();
/// B/16 shrunk to 2 layers of width 64 per tower, byte-level text vocabulary.
ModelConfig b16_shrunk(std::size_t image_size = 224, std::size_t patch_size = 16);
}  // namespace presets

/// Insertion-ordered table of named trainable tensors.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  std::size_t total_elements() const;
  void zero_grad();

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Expected shapes of every parameter, in creation order.
std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelConfig& config);

/// Fresh parameters: N(0, 0.02) weights, zero biases, unit norm gains, logit scale at init_log_scale.
ParamStore init_params(const ModelConfig& config, Rng& rng);

/// Fresh value for one named parameter, drawn the way init_params draws it.
Tensor init_param(const std::string& name, const Shape& shape, const ModelConfig& config, Rng& rng);

/// Throws ShapeError naming the first parameter that is missing or mis-shaped.
void check_params(const ModelConfig& config, const ParamStore& params);

struct ParamCount {
  std::size_t image = 0;
  std::size_t text = 0;
  std::size_t total = 0;  // image + text + logit scale
};

ParamCount count_params(const ModelConfig& config);

/// Layer-decay depth of a parameter: 0 for embeddings and positional tables, i+1 for
/// block i, num_layers+1 for the final norm, projection and logit scale.
std::size_t param_depth(const std::string& name, std::size_t num_layers);

/// Biases, norm gains and the logit scale are exempt from weight decay.
bool is_decay_exempt(const std::string& name);

/// "visual", "text" or "logit_scale".
std::string param_tower(const std::string& name);

}  // namespace clipforge
