// Copyright (c) 2026, The clipforge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Training loop: masked contrastive steps with dynamic loss scaling, checkpoint
// initialization, resumable state, timing benchmark and the four-arm ablation.

#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "clipforge/checkpoint.hpp"
#include "clipforge/data.hpp"
#include "clipforge/errors.hpp"
#include "clipforge/model.hpp"
#include "clipforge/optim.hpp"
#include "clipforge/rng.hpp"

namespace clipforge {

enum class InitPolicy { Scratch, Image, Both };

std::string to_string(InitPolicy p);
InitPolicy parse_init_policy(const std::string& s);

struct TrainConfig {
  std::string model_preset = "b16_shrunk";
  ModelConfig model = presets::b16_shrunk(32, 8);
  OptimizerConfig optimizer;

  double image_peak_lr = 2e-3;
  double image_layer_decay = 0.9;
  double text_peak_lr = 2e-3;
  double text_layer_decay = 0.9;
  double logit_scale_peak_lr = 2e-3;

  std::int64_t warmup_steps = 20;
  std::int64_t total_steps = 200;
  ScheduleShape schedule = ScheduleShape::Cosine;

  double mask_ratio = 0.5;
  std::size_t batch_size = 32;
  AugmentSpec augment;
  std::uint64_t seed = 0;

  InitPolicy init_policy = InitPolicy::Scratch;
  std::string init_checkpoint;
  /// Strict: any unmatched tensor is an error. Permissive: it is freshly initialized.
  bool init_strict = false;

  /// 0 means every 10% of total_steps.
  std::int64_t checkpoint_interval_steps = 0;
  double loss_scale_initial = 32768.0;
  std::int64_t loss_scale_growth_interval_steps = 2000;

  /// Corpus manifest; when empty a corpus is generated from the data_* keys and the seed.
  std::string data_manifest;
  std::size_t data_num_classes = 8;
  std::size_t data_samples_per_class = 16;

  std::uint64_t samples_seen() const { return static_cast<std::uint64_t>(batch_size) * static_cast<std::uint64_t>(total_steps); }
  Schedule schedule_spec() const { return {warmup_steps, total_steps, schedule}; }
  std::int64_t resolved_checkpoint_interval() const;
  void validate() const;

  /// Flat typed key/value object; unknown keys are ConfigErrors naming the key.
  static TrainConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  /// Applies one "key=value" override; the value is parsed as JSON, falling back to a string.
  void apply_override(const std::string& assignment);
};

/// The configured manifest, or a generated corpus sized to the model.
Corpus resolve_corpus(const TrainConfig& config);

/// Model config from a preset name and the flat keys that refine it.
ModelConfig model_from_preset(const std::string& name);

struct StepRecord {
  /// 1-based attempted step, counting skipped steps.
  std::int64_t step = 0;
  /// Optimizer steps applied so far, including this one if it was applied.
  std::int64_t effective_step = 0;
  double loss = 0.0;
  /// Head-depth learning rate of each parameter group.
  std::map<std::string, double> lr;
  double logit_scale = 0.0;
  bool overflow = false;
  double loss_scale = 0.0;
  std::uint64_t tokens = 0;
  double wall_time_s = 0.0;

  nlohmann::json to_json(bool include_wall_time = true) const;
  static StepRecord from_json(const nlohmann::json& j);
};

/// Raised when the loss scaler underflows; carries the most recent records.
class TrainingDiverged : public DivergenceError {
 public:
  TrainingDiverged(const std::string& what, std::vector<StepRecord> last)
      : DivergenceError(what), records_(std::move(last)) {}
  const std::vector<StepRecord>& records() const { return records_; }

 private:
  std::vector<StepRecord> records_;
};

struct InitReport {
  std::vector<std::string> loaded;
  std::vector<std::string> resampled;
  /// Freshly initialized because the policy excludes them or the checkpoint lacks a match.
  std::vector<std::string> fresh;
  /// Subset of `fresh` that the policy wanted but the checkpoint could not supply.
  std::vector<std::string> missing;

  nlohmann::json to_json() const;
};

/// Copies policy-selected tensors from a checkpoint. Positional tables whose grid
/// differs are resampled; other mismatches throw ShapeError in strict mode.
InitReport init_from_checkpoint(ParamStore& params, const ModelConfig& config, const Checkpoint& ckpt,
                                InitPolicy policy, bool strict);

class Trainer {
 public:
  Trainer(TrainConfig config, const Corpus& corpus);

  /// One attempted step on the next batch.
  StepRecord step();
  /// Runs attempted steps until `total_steps` optimizer steps have been applied.
  bool done() const { return effective_step_ >= config_.total_steps; }

  Checkpoint snapshot() const;
  /// Restores parameters, optimizer, scaler, generator and data position.
  void restore(const Checkpoint& ckpt);
  InitReport initialize_from(const Checkpoint& ckpt, InitPolicy policy, bool strict);

  const TrainConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  Optimizer& optimizer() { return optimizer_; }
  const LossScalerState& scaler() const { return scaler_; }
  LossScalerState& scaler() { return scaler_; }
  std::int64_t attempted_step() const { return attempted_step_; }
  std::int64_t effective_step() const { return effective_step_; }
  std::uint64_t samples_seen() const { return samples_seen_; }

  /// Test hook: runs after the unscaled gradients are formed and before the overflow check.
  std::function<void(ParamStore&, std::int64_t attempted_step)> gradient_hook;

 private:
  TrainConfig config_;
  const Corpus& corpus_;
  ParamStore params_;
  Optimizer optimizer_;
  LossScalerState scaler_;
  Rng rng_;
  Batcher batcher_;
  std::int64_t attempted_step_ = 0;
  std::int64_t effective_step_ = 0;
  std::uint64_t samples_seen_ = 0;
  std::deque<StepRecord> recent_;
};

struct TrainOptions {
  /// Checkpoints and the step log are written here when set.
  std::optional<std::filesystem::path> out_dir;
  std::optional<Checkpoint> resume;
  /// Stops early once this much wall time has elapsed (equal-budget comparisons).
  std::optional<double> wall_budget_s;
  std::function<void(ParamStore&, std::int64_t)> gradient_hook;
  std::function<void(const StepRecord&)> on_step;
};

struct TrainResult {
  Checkpoint final_checkpoint;
  std::vector<StepRecord> log;
  std::vector<std::filesystem::path> checkpoints;
  InitReport init_report;
  double wall_time_s = 0.0;
};

/// Full schedule: optional init, steps, periodic and final checkpoints, NDJSON log.
TrainResult train(const TrainConfig& config, const Corpus& corpus, const TrainOptions& options = {});

/// Mean loss over the last 10% of records (at least one).
double final_loss(const std::vector<StepRecord>& log);

struct BenchArm {
  double mask_ratio = 0.0;
  double median_step_s = 0.0;
  double time_per_million_samples_s = 0.0;
  std::size_t timed_steps = 0;
};

struct BenchReport {
  std::size_t batch_size = 0;
  BenchArm unmasked;
  BenchArm masked;
  /// masked median / unmasked median.
  double ratio = 0.0;
  long peak_rss_kb = 0;

  nlohmann::json to_json() const;
};

/// Median train-step time over `steps` timed steps after `warmup` discarded ones, for
/// mask ratio 0 and for the configured ratio (0.5 when the config has none).
BenchReport bench(const TrainConfig& config, const Corpus& corpus, std::size_t steps, std::size_t warmup = 5);

struct AblationArm {
  std::string name;
  InitPolicy init = InitPolicy::Scratch;
  OptimizerKind optimizer = OptimizerKind::AdamW;
  double mask_ratio = 0.0;
  std::int64_t steps = 0;
  double final_loss = 0.0;
  double wall_time_s = 0.0;
  double zero_shot_top1 = 0.0;
};

struct AblationReport {
  std::int64_t prior_steps = 0;
  std::vector<AblationArm> arms;

  nlohmann::json to_json() const;
  std::string table() const;
};

/// Prior run from scratch, then scratch/AdamW, init/AdamW, init/LAMB at equal steps and
/// init/LAMB/masked at the wall-clock budget of the init/LAMB arm.
AblationReport ablate(const TrainConfig& config, const Corpus& corpus, std::int64_t prior_steps,
                      const std::optional<std::filesystem::path>& out_dir = std::nullopt);

long peak_rss_kb();

}  // namespace clipforge
