// Copyright (c) 2026, The clipforge Authors
// SPDX-License-Identifier: Apache-2.0
//
// LAMB / AdamW with per-tower parameter groups, layer-wise learning-rate decay,
// warmup + cosine/linear schedules and a dynamic loss scaler.

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "clipforge/model.hpp"

namespace clipforge {

enum class OptimizerKind { Lamb, AdamW };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(const std::string& s);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Lamb;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-6;
  double weight_decay = 0.05;
  /// Diagnostic: LAMB with trust ratio pinned to 1.
  bool force_unit_trust_ratio = false;

  void validate() const;
  bool operator==(const OptimizerConfig&) const = default;
};

/// First/second moments of one tensor, stored in float32 like the parameter.
struct MomentState {
  std::vector<float> m;
  std::vector<float> v;
  std::int64_t step = 0;
};

/// One LAMB update of w in place. Returns false (and leaves w and state untouched)
/// when g contains NaN/Inf, which callers treat as an overflow.
bool lamb_step(std::span<float> w, std::span<const float> g, MomentState& state, const OptimizerConfig& cfg, double lr,
               bool decay_exempt = false);

/// One AdamW update (decoupled weight decay, no trust ratio). Same overflow contract as lamb_step.
bool adamw_step(std::span<float> w, std::span<const float> g, MomentState& state, const OptimizerConfig& cfg, double lr,
                bool decay_exempt = false);

/// Per-depth multipliers for depths 0..num_layers+1: decay^(num_layers + 1 - depth).
std::vector<double> layer_scales(double layer_decay, std::size_t num_layers);

enum class ScheduleShape { Cosine, Linear };

std::string to_string(ScheduleShape shape);
ScheduleShape parse_schedule_shape(const std::string& s);

struct Schedule {
  std::int64_t warmup_steps = 0;
  std::int64_t total_steps = 1;
  ScheduleShape shape = ScheduleShape::Cosine;

  void validate() const;
};

/// Linear ramp 0 -> peak over warmup, then cosine or linear decay to 0 at total_steps.
double lr_at(const Schedule& schedule, double peak, std::int64_t step);

inline constexpr double kMinLossScale = 0x1p-20;

struct LossScalerState {
  double scale = 32768.0;
  std::int64_t good_steps = 0;
  std::int64_t growth_interval = 2000;
  double growth_factor = 2.0;
  double backoff_factor = 0.5;
};

/// Advances the scaler after a backward pass. Returns whether the optimizer step
/// should be applied. Throws DivergenceError if the scale falls below 2^-20.
bool scaler_update(LossScalerState& state, bool overflow);

struct ParamGroup {
  std::string name;
  std::vector<std::string> members;
  double peak_lr = 0.0;
  double layer_decay = 1.0;
  /// Transformer depth of the tower the group belongs to (for layer_scales).
  std::size_t num_layers = 0;
};

/// Three groups: "visual" and "text" with their own peak LR and layer decay, and
/// "logit_scale" with its own peak LR and no decay.
std::vector<ParamGroup> make_param_groups(const ParamStore& params, const ModelConfig& config, double image_lr,
                                          double image_layer_decay, double text_lr, double text_layer_decay,
                                          double logit_scale_lr);

/// Optimizer over a ParamStore: owns moment state and resolves per-tensor learning rates.
class Optimizer {
 public:
  Optimizer(OptimizerConfig config, std::vector<ParamGroup> groups, Schedule schedule);

  /// Throws unless every parameter belongs to exactly one group and every member exists.
  void validate_groups(const ParamStore& params) const;

  /// Applies one update at schedule step `step`. All gradients are checked for
  /// NaN/Inf first; on overflow nothing is modified and false is returned.
  bool step(ParamStore& params, std::int64_t step);

  /// peak_lr(group) · layer_scale(depth) · lr_at(step) / peak for a named tensor.
  double lr_for(const std::string& name, std::int64_t step) const;
  /// Head-depth LR of each group at `step`.
  std::map<std::string, double> group_lrs(std::int64_t step) const;
  /// Per-tensor LRs used by the most recent successful step.
  const std::map<std::string, double>& last_lrs() const { return last_lrs_; }

  const OptimizerConfig& config() const { return config_; }
  const std::vector<ParamGroup>& groups() const { return groups_; }
  const Schedule& schedule() const { return schedule_; }
  void set_schedule(const Schedule& s);

  std::map<std::string, MomentState>& state() { return state_; }
  const std::map<std::string, MomentState>& state() const { return state_; }

 private:
  struct Slot {
    std::size_t group = 0;
    std::size_t depth = 0;
  };
  const Slot& slot(const std::string& name) const;

  OptimizerConfig config_;
  std::vector<ParamGroup> groups_;
  Schedule schedule_;
  std::map<std::string, Slot> slots_;
  std::vector<std::vector<double>> group_scales_;
  std::map<std::string, MomentState> state_;
  std::map<std::string, double> last_lrs_;
};

}  // namespace clipforge
