// Copyright (c) 2026, The clipforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "clipforge/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "clipforge/errors.hpp"

namespace clipforge {

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::Lamb ? "lamb" : "adamw"; }

OptimizerKind parse_optimizer_kind(const std::string& s) {
  if (s == "lamb" || s == "LAMB") return OptimizerKind::Lamb;
  if (s == "adamw" || s == "AdamW") return OptimizerKind::AdamW;
  throw ConfigError("optimizer", "unknown optimizer '" + s + "' (expected lamb or adamw)");
}

void OptimizerConfig::validate() const {
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1", "must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2", "must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("eps", "must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay", "must be non-negative");
}

namespace {

bool all_finite(std::span<const float> g) {
  return std::all_of(g.begin(), g.end(), [](float x) { return std::isfinite(x); });
}

// Updates the float32 moments and returns the bias-corrected Adam direction in double.
std::vector<double> adam_direction(std::span<const float> g, MomentState& state, const OptimizerConfig& cfg) {
  const std::size_t n = g.size();
  if (state.m.empty()) {
    state.m.assign(n, 0.0f);
    state.v.assign(n, 0.0f);
  }
  if (state.m.size() != n || state.v.size() != n)
    throw DimensionError("optimizer: moment state has " + std::to_string(state.m.size()) + " entries for a tensor of " +
                         std::to_string(n));
  const std::int64_t t = state.step + 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  std::vector<double> dir(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double gi = g[i];
    state.m[i] = static_cast<float>(cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * gi);
    state.v[i] = static_cast<float>(cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * gi * gi);
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    dir[i] = mhat / (std::sqrt(vhat) + cfg.eps);
  }
  state.step = t;
  return dir;
}

void check_sizes(std::span<float> w, std::span<const float> g) {
  if (w.size() != g.size())
    throw DimensionError("optimizer: parameter of " + std::to_string(w.size()) + " entries with gradient of " +
                         std::to_string(g.size()));
}

}  // namespace

bool lamb_step(std::span<float> w, std::span<const float> g, MomentState& state, const OptimizerConfig& cfg, double lr,
               bool decay_exempt) {
  check_sizes(w, g);
  if (!all_finite(g)) return false;
  std::vector<double> u = adam_direction(g, state, cfg);
  const double lambda = decay_exempt ? 0.0 : cfg.weight_decay;
  double wn = 0.0, un = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    u[i] += lambda * w[i];
    wn += static_cast<double>(w[i]) * w[i];
    un += u[i] * u[i];
  }
  wn = std::sqrt(wn);
  un = std::sqrt(un);
  double trust = (wn > 0.0 && un > 0.0) ? wn / un : 1.0;
  if (cfg.force_unit_trust_ratio) trust = 1.0;
  const double step = lr * trust;
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<float>(w[i] - step * u[i]);
  return true;
}

bool adamw_step(std::span<float> w, std::span<const float> g, MomentState& state, const OptimizerConfig& cfg, double lr,
                bool decay_exempt) {
  check_sizes(w, g);
  if (!all_finite(g)) return false;
  const std::vector<double> u = adam_direction(g, state, cfg);
  const double lambda = decay_exempt ? 0.0 : cfg.weight_decay;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double wi = w[i];
    w[i] = static_cast<float>(wi - lr * u[i] - lr * lambda * wi);
  }
  return true;
}

std::vector<double> layer_scales(double layer_decay, std::size_t num_layers) {
  if (!(layer_decay > 0.0 && layer_decay <= 1.0)) throw ConfigError("layer_decay", "must lie in (0, 1]");
  std::vector<double> s(num_layers + 2);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = std::pow(layer_decay, static_cast<double>(num_layers + 1 - i));
  return s;
}

std::string to_string(ScheduleShape shape) { return shape == ScheduleShape::Cosine ? "cosine" : "linear"; }

ScheduleShape parse_schedule_shape(const std::string& s) {
  if (s == "cosine") return ScheduleShape::Cosine;
  if (s == "linear") return ScheduleShape::Linear;
  throw ConfigError("schedule", "unknown schedule shape '" + s + "' (expected cosine or linear)");
}

void Schedule::validate() const {
  if (total_steps < 1) throw ConfigError("total_steps", "must be at least 1");
  if (warmup_steps < 0 || warmup_steps >= total_steps)
    throw ConfigError("warmup_steps", "must lie in [0, total_steps), got " + std::to_string(warmup_steps));
}

double lr_at(const Schedule& schedule, double peak, std::int64_t step) {
  schedule.validate();
  if (step < 0 || step > schedule.total_steps)
    throw RangeError("lr_at: step " + std::to_string(step) + " outside [0, " + std::to_string(schedule.total_steps) + "]");
  if (step < schedule.warmup_steps)
    return peak * static_cast<double>(step) / static_cast<double>(schedule.warmup_steps);
  const double t = static_cast<double>(step - schedule.warmup_steps) /
                   static_cast<double>(schedule.total_steps - schedule.warmup_steps);
  if (schedule.shape == ScheduleShape::Cosine) return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
  return peak * (1.0 - t);
}

bool scaler_update(LossScalerState& state, bool overflow) {
  if (!(state.scale > 0.0)) throw ContractError("scaler_update: scale must be positive");
  if (overflow) {
    state.scale *= state.backoff_factor;
    state.good_steps = 0;
    if (state.scale < kMinLossScale)
      throw DivergenceError("loss scale fell below 2^-20 after repeated overflow (scale " + std::to_string(state.scale) + ")");
    return false;
  }
  if (++state.good_steps >= state.growth_interval) {
    state.scale *= state.growth_factor;
    state.good_steps = 0;
  }
  return true;
}

std::vector<ParamGroup> make_param_groups(const ParamStore& params, const ModelConfig& config, double image_lr,
                                          double image_layer_decay, double text_lr, double text_layer_decay,
                                          double logit_scale_lr) {
  ParamGroup visual{"visual", {}, image_lr, image_layer_decay, config.image.layers};
  ParamGroup text{"text", {}, text_lr, text_layer_decay, config.text.layers};
  ParamGroup logit{"logit_scale", {}, logit_scale_lr, 1.0, 0};
  for (const auto& [name, t] : params) {
    const std::string tower = param_tower(name);
    if (tower == "visual")
      visual.members.push_back(name);
    else if (tower == "text")
      text.members.push_back(name);
    else
      logit.members.push_back(name);
  }
  return {visual, text, logit};
}

Optimizer::Optimizer(OptimizerConfig config, std::vector<ParamGroup> groups, Schedule schedule)
    : config_(config), groups_(std::move(groups)), schedule_(schedule) {
  config_.validate();
  schedule_.validate();
  for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
    const ParamGroup& g = groups_[gi];
    group_scales_.push_back(layer_scales(g.layer_decay, g.num_layers));
    for (const std::string& name : g.members) {
      if (slots_.count(name)) throw ConfigError("param_groups", "parameter '" + name + "' belongs to more than one group");
      const std::size_t depth = g.num_layers == 0 ? 1 : param_depth(name, g.num_layers);
      slots_[name] = {gi, std::min(depth, g.num_layers + 1)};
    }
  }
}

void Optimizer::validate_groups(const ParamStore& params) const {
  for (const auto& [name, t] : params)
    if (!slots_.count(name)) throw ConfigError("param_groups", "parameter '" + name + "' belongs to no group");
  for (const auto& [name, s] : slots_)
    if (!params.contains(name)) throw ConfigError("param_groups", "group member '" + name + "' is not a parameter");
}

const Optimizer::Slot& Optimizer::slot(const std::string& name) const {
  auto it = slots_.find(name);
  if (it == slots_.end()) throw ConfigError("param_groups", "parameter '" + name + "' belongs to no group");
  return it->second;
}

void Optimizer::set_schedule(const Schedule& s) {
  s.validate();
  schedule_ = s;
}

double Optimizer::lr_for(const std::string& name, std::int64_t step) const {
  const Slot& s = slot(name);
  const ParamGroup& g = groups_[s.group];
  return lr_at(schedule_, g.peak_lr * group_scales_[s.group][s.depth], step);
}

std::map<std::string, double> Optimizer::group_lrs(std::int64_t step) const {
  std::map<std::string, double> out;
  for (const ParamGroup& g : groups_) out[g.name] = lr_at(schedule_, g.peak_lr, step);
  return out;
}

bool Optimizer::step(ParamStore& params, std::int64_t step) {
  for (auto& [name, t] : params)
    if (t.has_grad() && !all_finite(t.grad())) return false;
  std::map<std::string, double> lrs;
  for (auto& [name, t] : params) {
    const double lr = lr_for(name, step);
    lrs[name] = lr;
    std::vector<float> zeros;
    std::span<const float> g = t.grad();
    if (!t.has_grad()) {
      zeros.assign(t.numel(), 0.0f);
      g = zeros;
    }
    MomentState& st = state_[name];
    const bool exempt = is_decay_exempt(name);
    if (config_.kind == OptimizerKind::Lamb)
      lamb_step(t.mutable_data(), g, st, config_, lr, exempt);
    else
      adamw_step(t.mutable_data(), g, st, config_, lr, exempt);
  }
  last_lrs_ = std::move(lrs);
  return true;
}

}  // namespace clipforge
