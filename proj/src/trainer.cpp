// Copyright (c) 2026, The clipforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "clipforge/trainer.hpp"

#include <sys/resource.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "clipforge/contrastive.hpp"
#include "clipforge/encoder.hpp"
#include "clipforge/eval.hpp"
#include "clipforge/ops.hpp"

namespace clipforge {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

constexpr std::uint64_t kTrainStream = 0x5851F42D4C957F2DULL;
constexpr std::uint64_t kOrderStream = 0xB47C1D7A3E9F0C15ULL;

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Keys that describe the model; a preset change resets them.
const std::vector<std::string> kModelKeys = {"image_layers",   "image_width",  "image_heads",   "image_size_px",
                                             "patch_size_px",  "channels",     "text_layers",   "text_width",
                                             "text_heads",     "context_length_tokens", "embed_dim", "drop_path_rate",
                                             "mlp_ratio"};

}  // namespace

std::string to_string(InitPolicy p) {
  switch (p) {
    case InitPolicy::Scratch: return "scratch";
    case InitPolicy::Image: return "image";
    case InitPolicy::Both: return "both";
  }
  return "scratch";
}

InitPolicy parse_init_policy(const std::string& s) {
  if (s == "scratch") return InitPolicy::Scratch;
  if (s == "image" || s == "image-from-checkpoint") return InitPolicy::Image;
  if (s == "both" || s == "both-from-checkpoint") return InitPolicy::Both;
  throw ConfigError("init_policy", "unknown policy '" + s + "' (expected scratch, image or both)");
}

ModelConfig model_from_preset(const std::string& name) {
  if (name == "b16") return presets::b16();
  if (name == "l14") return presets::l14();
  if (name == "l14_336") return presets::l14_336();
  if (name == "b16_shrunk") return presets::b16_shrunk(32, 8);
  throw ConfigError("model_preset", "unknown preset '" + name + "' (expected b16, l14, l14_336 or b16_shrunk)");
}

Corpus resolve_corpus(const TrainConfig& config) {
  if (!config.data_manifest.empty()) return load_corpus(config.data_manifest);
  CorpusSpec spec;
  spec.num_classes = config.data_num_classes;
  spec.samples_per_class = config.data_samples_per_class;
  spec.image_size = config.model.image.image_size;
  spec.channels = config.model.image.channels;
  spec.seed = config.seed;
  return generate_corpus(spec);
}

// -- TrainConfig -----------------------------------------------------------------

std::int64_t TrainConfig::resolved_checkpoint_interval() const {
  if (checkpoint_interval_steps > 0) return checkpoint_interval_steps;
  return std::max<std::int64_t>(1, (total_steps + 9) / 10);
}

void TrainConfig::validate() const {
  try {
    model.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError("model", e.what());
  }
  optimizer.validate();
  schedule_spec().validate();
  if (batch_size < 1) throw ConfigError("batch_size", "must be positive");
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) throw ConfigError("mask_ratio", "must lie in [0, 1)");
  for (auto [key, v] : {std::pair{"image_peak_lr", image_peak_lr}, {"text_peak_lr", text_peak_lr},
                        {"logit_scale_peak_lr", logit_scale_peak_lr}})
    if (!(v >= 0.0 && std::isfinite(v))) throw ConfigError(key, "must be a finite non-negative rate");
  for (auto [key, v] : {std::pair{"image_layer_decay", image_layer_decay}, {"text_layer_decay", text_layer_decay}})
    if (!(v > 0.0 && v <= 1.0)) throw ConfigError(key, "must lie in (0, 1]");
  if (augment.enabled && !(augment.crop_lo > 0.0 && augment.crop_lo <= augment.crop_hi && augment.crop_hi <= 1.0))
    throw ConfigError("crop_scale_lo", "need 0 < crop_scale_lo <= crop_scale_hi <= 1");
  if (checkpoint_interval_steps < 0) throw ConfigError("checkpoint_interval_steps", "must be non-negative");
  if (!(loss_scale_initial > 0.0)) throw ConfigError("loss_scale_initial", "must be positive");
  if (loss_scale_growth_interval_steps < 1) throw ConfigError("loss_scale_growth_interval_steps", "must be positive");
}

TrainConfig TrainConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("<root>", "config must be a JSON object");
  TrainConfig c;
  if (j.contains("model_preset")) {
    try {
      c.model_preset = j.at("model_preset").get<std::string>();
    } catch (const json::exception& e) {
      throw ConfigError("model_preset", e.what());
    }
    c.model = model_from_preset(c.model_preset);
  }
  for (const auto& [key, value] : j.items()) {
    try {
      auto& im = c.model.image;
      auto& tx = c.model.text;
      if (key == "model_preset") continue;
      else if (key == "image_layers") im.layers = value.get<std::size_t>();
      else if (key == "image_width") im.width = value.get<std::size_t>();
      else if (key == "image_heads") im.heads = value.get<std::size_t>();
      else if (key == "image_size_px") im.image_size = value.get<std::size_t>();
      else if (key == "patch_size_px") im.patch_size = value.get<std::size_t>();
      else if (key == "channels") im.channels = value.get<std::size_t>();
      else if (key == "mlp_ratio") im.mlp_ratio = tx.mlp_ratio = value.get<std::size_t>();
      else if (key == "text_layers") tx.layers = value.get<std::size_t>();
      else if (key == "text_width") tx.width = value.get<std::size_t>();
      else if (key == "text_heads") tx.heads = value.get<std::size_t>();
      else if (key == "context_length_tokens") tx.context_length = value.get<std::size_t>();
      else if (key == "embed_dim") c.model.embed_dim = value.get<std::size_t>();
      else if (key == "drop_path_rate") im.drop_path = tx.drop_path = value.get<double>();
      else if (key == "init_log_scale") c.model.init_log_scale = value.get<double>();
      else if (key == "max_log_scale") c.model.max_log_scale = value.get<double>();
      else if (key == "optimizer") c.optimizer.kind = parse_optimizer_kind(value.get<std::string>());
      else if (key == "beta1") c.optimizer.beta1 = value.get<double>();
      else if (key == "beta2") c.optimizer.beta2 = value.get<double>();
      else if (key == "eps") c.optimizer.eps = value.get<double>();
      else if (key == "weight_decay") c.optimizer.weight_decay = value.get<double>();
      else if (key == "image_peak_lr") c.image_peak_lr = value.get<double>();
      else if (key == "image_layer_decay") c.image_layer_decay = value.get<double>();
      else if (key == "text_peak_lr") c.text_peak_lr = value.get<double>();
      else if (key == "text_layer_decay") c.text_layer_decay = value.get<double>();
      else if (key == "logit_scale_peak_lr") c.logit_scale_peak_lr = value.get<double>();
      else if (key == "warmup_steps") c.warmup_steps = value.get<std::int64_t>();
      else if (key == "total_steps") c.total_steps = value.get<std::int64_t>();
      else if (key == "schedule") c.schedule = parse_schedule_shape(value.get<std::string>());
      else if (key == "mask_ratio") c.mask_ratio = value.get<double>();
      else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "augment") c.augment.enabled = value.get<bool>();
      else if (key == "crop_scale_lo") c.augment.crop_lo = value.get<double>();
      else if (key == "crop_scale_hi") c.augment.crop_hi = value.get<double>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "init_policy") c.init_policy = parse_init_policy(value.get<std::string>());
      else if (key == "init_checkpoint") c.init_checkpoint = value.get<std::string>();
      else if (key == "init_strict") c.init_strict = value.get<bool>();
      else if (key == "checkpoint_interval_steps") c.checkpoint_interval_steps = value.get<std::int64_t>();
      else if (key == "loss_scale_initial") c.loss_scale_initial = value.get<double>();
      else if (key == "loss_scale_growth_interval_steps") c.loss_scale_growth_interval_steps = value.get<std::int64_t>();
      else if (key == "data_manifest") c.data_manifest = value.get<std::string>();
      else if (key == "data_num_classes") c.data_num_classes = value.get<std::size_t>();
      else if (key == "data_samples_per_class") c.data_samples_per_class = value.get<std::size_t>();
      else if (key == "samples_seen") continue;  // derived; echoed by to_json
      else if (key == "overrides") continue;  // echo of the command-line overrides already folded in
      else throw ConfigError(key, "unknown config key");
    } catch (const json::exception& e) {
      throw ConfigError(key, std::string("wrong type: ") + e.what());
    }
  }
  if (j.contains("samples_seen") && j.at("samples_seen").get<std::uint64_t>() != c.samples_seen())
    throw ConfigError("samples_seen", "must equal batch_size x total_steps (" + std::to_string(c.samples_seen()) + ")");
  c.validate();
  return c;
}

json TrainConfig::to_json() const {
  const auto& im = model.image;
  const auto& tx = model.text;
  return {{"model_preset", model_preset},
          {"image_layers", im.layers},
          {"image_width", im.width},
          {"image_heads", im.heads},
          {"image_size_px", im.image_size},
          {"patch_size_px", im.patch_size},
          {"channels", im.channels},
          {"mlp_ratio", im.mlp_ratio},
          {"text_layers", tx.layers},
          {"text_width", tx.width},
          {"text_heads", tx.heads},
          {"context_length_tokens", tx.context_length},
          {"embed_dim", model.embed_dim},
          {"drop_path_rate", im.drop_path},
          {"init_log_scale", model.init_log_scale},
          {"max_log_scale", model.max_log_scale},
          {"optimizer", to_string(optimizer.kind)},
          {"beta1", optimizer.beta1},
          {"beta2", optimizer.beta2},
          {"eps", optimizer.eps},
          {"weight_decay", optimizer.weight_decay},
          {"image_peak_lr", image_peak_lr},
          {"image_layer_decay", image_layer_decay},
          {"text_peak_lr", text_peak_lr},
          {"text_layer_decay", text_layer_decay},
          {"logit_scale_peak_lr", logit_scale_peak_lr},
          {"warmup_steps", warmup_steps},
          {"total_steps", total_steps},
          {"samples_seen", samples_seen()},
          {"schedule", to_string(schedule)},
          {"mask_ratio", mask_ratio},
          {"batch_size", batch_size},
          {"augment", augment.enabled},
          {"crop_scale_lo", augment.crop_lo},
          {"crop_scale_hi", augment.crop_hi},
          {"seed", seed},
          {"init_policy", to_string(init_policy)},
          {"init_checkpoint", init_checkpoint},
          {"init_strict", init_strict},
          {"checkpoint_interval_steps", checkpoint_interval_steps},
          {"loss_scale_initial", loss_scale_initial},
          {"loss_scale_growth_interval_steps", loss_scale_growth_interval_steps},
          {"data_manifest", data_manifest},
          {"data_num_classes", data_num_classes},
          {"data_samples_per_class", data_samples_per_class}};
}

void TrainConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError(assignment, "override must look like key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (value.is_discarded()) value = text;
  json j = to_json();
  if (!j.contains(key)) throw ConfigError(key, "unknown config key");
  if (key == "model_preset")
    for (const auto& k : kModelKeys) j.erase(k);
  j[key] = value;
  j.erase("samples_seen");
  *this = from_json(j);
}

// -- StepRecord ------------------------------------------------------------------

json StepRecord::to_json(bool include_wall_time) const {
  json j = {{"step", step},
            {"effective_step", effective_step},
            {"loss", std::isfinite(loss) ? json(loss) : json(nullptr)},
            {"lr", lr},
            {"logit_scale", logit_scale},
            {"overflow", overflow},
            {"loss_scale", loss_scale},
            {"tokens", tokens}};
  if (include_wall_time) j["wall_time_s"] = wall_time_s;
  return j;
}

StepRecord StepRecord::from_json(const json& j) {
  StepRecord r;
  r.step = j.at("step").get<std::int64_t>();
  r.effective_step = j.at("effective_step").get<std::int64_t>();
  r.loss = j.at("loss").is_null() ? std::nan("") : j.at("loss").get<double>();
  r.lr = j.at("lr").get<std::map<std::string, double>>();
  r.logit_scale = j.at("logit_scale").get<double>();
  r.overflow = j.at("overflow").get<bool>();
  r.loss_scale = j.at("loss_scale").get<double>();
  r.tokens = j.at("tokens").get<std::uint64_t>();
  r.wall_time_s = j.value("wall_time_s", 0.0);
  return r;
}

json InitReport::to_json() const {
  return {{"loaded", loaded}, {"resampled", resampled}, {"fresh", fresh}, {"missing", missing}};
}

// -- init from checkpoint ------------------------------------------------------

InitReport init_from_checkpoint(ParamStore& params, const ModelConfig& config, const Checkpoint& ckpt,
                                InitPolicy policy, bool strict) {
  InitReport report;
  for (const auto& [name, shape] : parameter_shapes(config)) {
    const std::string tower = param_tower(name);
    const bool wanted = policy == InitPolicy::Both || (policy == InitPolicy::Image && tower == "visual");
    if (!wanted) {
      report.fresh.push_back(name);
      continue;
    }
    Tensor& dst = params.at(name);
    const NamedArray* src = ckpt.find(name);
    if (src && src->shape == shape) {
      std::copy(src->values.begin(), src->values.end(), dst.mutable_data().begin());
      report.loaded.push_back(name);
      continue;
    }
    if (src && name == "visual.pos_embed" && src->shape.size() == 2 && src->shape[1] == shape[1]) {
      const Tensor resampled = interpolate_pos_embed(Tensor::from(src->shape, src->values), config.image.grid());
      if (resampled.shape() == shape) {
        std::copy(resampled.data().begin(), resampled.data().end(), dst.mutable_data().begin());
        report.resampled.push_back(name);
        continue;
      }
    }
    if (strict)
      throw ShapeError("init_from_checkpoint: parameter '" + name + "' expects shape " + to_string(shape) +
                       (src ? ", checkpoint has " + to_string(src->shape) : ", checkpoint has no such tensor"));
    report.fresh.push_back(name);
    report.missing.push_back(name);
  }
  return report;
}

// -- Trainer -------------------------------------------------------------------

namespace {

ParamStore fresh_params(const TrainConfig& c) {
  c.validate();
  Rng rng(c.seed);
  return init_params(c.model, rng);
}

Optimizer make_optimizer(const TrainConfig& c, const ParamStore& params) {
  auto groups = make_param_groups(params, c.model, c.image_peak_lr, c.image_layer_decay, c.text_peak_lr,
                                  c.text_layer_decay, c.logit_scale_peak_lr);
  Optimizer opt(c.optimizer, std::move(groups), c.schedule_spec());
  opt.validate_groups(params);
  return opt;
}

}  // namespace

Trainer::Trainer(TrainConfig config, const Corpus& corpus)
    : config_(std::move(config)),
      corpus_(corpus),
      params_(fresh_params(config_)),
      optimizer_(make_optimizer(config_, params_)),
      rng_(config_.seed ^ kTrainStream),
      batcher_(corpus.records.size(), config_.batch_size, config_.seed ^ kOrderStream) {
  if (corpus.image_size != config_.model.image.image_size || corpus.channels != config_.model.image.channels)
    throw ConfigError("image_size_px", "corpus images are " + std::to_string(corpus.channels) + "x" +
                                           std::to_string(corpus.image_size) + "px, model expects " +
                                           std::to_string(config_.model.image.channels) + "x" +
                                           std::to_string(config_.model.image.image_size) + "px");
  scaler_.scale = config_.loss_scale_initial;
  scaler_.growth_interval = config_.loss_scale_growth_interval_steps;
}

StepRecord Trainer::step() {
  const auto t0 = Clock::now();
  const ModelConfig& model = config_.model;
  StepRecord rec;
  rec.step = ++attempted_step_;
  rec.loss_scale = scaler_.scale;

  const auto indices = batcher_.next();
  const Batch batch = make_batch(corpus_, indices, true, config_.augment, &rng_, TokenizerSpec{model.text.context_length});
  std::optional<MaskSpec> mask;
  if (config_.mask_ratio > 0.0) mask = MaskSpec{config_.mask_ratio};
  const EmbeddingOutput img = encode_image(batch.images, model, params_, mask, &rng_);
  const EmbeddingOutput txt = encode_text(batch.tokens, model, params_, &rng_);
  LogitScale ls = LogitScale::from(params_, model);
  const Tensor loss = clip_loss(similarity_logits(img, txt, ls));
  rec.loss = loss.item();
  rec.tokens = static_cast<std::uint64_t>(config_.batch_size) * (img.sequence_length + txt.sequence_length);

  params_.zero_grad();
  backward(scale(loss, static_cast<float>(scaler_.scale)));
  const double inv = 1.0 / scaler_.scale;
  for (auto& [name, t] : params_)
    if (t.has_grad())
      for (float& g : t.mutable_grad()) g = static_cast<float>(g * inv);
  if (gradient_hook) gradient_hook(params_, attempted_step_);

  bool overflow = !std::isfinite(rec.loss);
  for (auto& [name, t] : params_)
    if (!overflow && t.has_grad())
      overflow = std::any_of(t.grad().begin(), t.grad().end(), [](float g) { return !std::isfinite(g); });
  rec.overflow = overflow;

  bool apply = false;
  try {
    apply = scaler_update(scaler_, overflow);
  } catch (const DivergenceError& e) {
    rec.effective_step = effective_step_;
    rec.logit_scale = ls.effective();
    rec.wall_time_s = seconds_since(t0);
    std::vector<StepRecord> last(recent_.begin(), recent_.end());
    last.push_back(rec);
    if (last.size() > 10) last.erase(last.begin(), last.end() - 10);
    throw TrainingDiverged(std::string("training diverged: ") + e.what(), std::move(last));
  }
  if (apply) {
    ++effective_step_;
    optimizer_.step(params_, effective_step_);
    samples_seen_ += config_.batch_size;
    clamp_scale(ls);
  }
  rec.effective_step = effective_step_;
  rec.lr = optimizer_.group_lrs(std::min(apply ? effective_step_ : effective_step_ + 1, config_.total_steps));
  rec.logit_scale = ls.effective();
  params_.zero_grad();
  rec.wall_time_s = seconds_since(t0);
  recent_.push_back(rec);
  if (recent_.size() > 10) recent_.pop_front();
  return rec;
}

Checkpoint Trainer::snapshot() const {
  Checkpoint ck;
  ck.tensors = snapshot_params(params_);
  ck.optimizer = optimizer_.state();
  ck.metadata = {{"format", "clipforge.checkpoint"},
                 {"train_config", config_.to_json()},
                 {"attempted_step", attempted_step_},
                 {"effective_step", effective_step_},
                 {"samples_seen", samples_seen_},
                 {"log_scale", params_.at("logit_scale").item()},
                 {"loss_scale", scaler_.scale},
                 {"loss_scale_good_steps", scaler_.good_steps},
                 {"rng_state", rng_.state()},
                 {"data_epoch", batcher_.epoch()},
                 {"data_cursor", batcher_.cursor()}};
  return ck;
}

void Trainer::restore(const Checkpoint& ckpt) {
  const json& m = ckpt.metadata;
  for (const char* key : {"attempted_step", "effective_step", "samples_seen", "loss_scale", "rng_state", "data_epoch", "data_cursor"})
    if (!m.contains(key)) throw FormatError(std::string("checkpoint metadata lacks '") + key + "'");
  for (auto& [name, t] : params_) {
    const NamedArray* src = ckpt.find(name);
    if (!src) throw ShapeError("restore: checkpoint has no tensor '" + name + "'");
    if (src->shape != t.shape())
      throw ShapeError("restore: tensor '" + name + "' is " + to_string(src->shape) + " in the checkpoint, model expects " +
                       to_string(t.shape()));
    std::copy(src->values.begin(), src->values.end(), t.mutable_data().begin());
  }
  optimizer_.state() = ckpt.optimizer;
  attempted_step_ = m.at("attempted_step").get<std::int64_t>();
  effective_step_ = m.at("effective_step").get<std::int64_t>();
  samples_seen_ = m.at("samples_seen").get<std::uint64_t>();
  scaler_.scale = m.at("loss_scale").get<double>();
  scaler_.good_steps = m.value("loss_scale_good_steps", std::int64_t{0});
  rng_.set_state(m.at("rng_state").get<std::string>());
  batcher_.set_position(m.at("data_epoch").get<std::uint64_t>(), m.at("data_cursor").get<std::size_t>());
  recent_.clear();
}

InitReport Trainer::initialize_from(const Checkpoint& ckpt, InitPolicy policy, bool strict) {
  return init_from_checkpoint(params_, config_.model, ckpt, policy, strict);
}

// -- train -----------------------------------------------------------------------

TrainResult train(const TrainConfig& config, const Corpus& corpus, const TrainOptions& options) {
  if (corpus.records.empty()) throw InputError("train: corpus is empty");
  TrainResult result;
  Trainer trainer(config, corpus);
  trainer.gradient_hook = options.gradient_hook;
  if (options.resume) {
    trainer.restore(*options.resume);
  } else if (config.init_policy != InitPolicy::Scratch) {
    if (config.init_checkpoint.empty())
      throw ConfigError("init_checkpoint", "policy '" + to_string(config.init_policy) + "' needs a checkpoint path");
    result.init_report = trainer.initialize_from(load_checkpoint(config.init_checkpoint), config.init_policy, config.init_strict);
  }

  std::ofstream log_file;
  if (options.out_dir) {
    fs::create_directories(*options.out_dir / "checkpoints");
    log_file.open(*options.out_dir / "steps.ndjson", std::ios::app);
    if (!log_file) throw FormatError("cannot open step log in '" + options.out_dir->string() + "'");
  }
  const std::int64_t interval = config.resolved_checkpoint_interval();
  const auto t0 = Clock::now();
  while (!trainer.done()) {
    const std::int64_t before = trainer.effective_step();
    StepRecord rec = trainer.step();
    if (log_file.is_open()) log_file << rec.to_json().dump() << '\n' << std::flush;
    if (options.on_step) options.on_step(rec);
    result.log.push_back(std::move(rec));
    const bool advanced = trainer.effective_step() > before;
    if (options.out_dir && advanced && !trainer.done() && trainer.effective_step() % interval == 0) {
      std::ostringstream name;
      name << "step-" << std::setw(6) << std::setfill('0') << trainer.effective_step() << ".cfck";
      const fs::path p = *options.out_dir / "checkpoints" / name.str();
      save_checkpoint(trainer.snapshot(), p);
      result.checkpoints.push_back(p);
    }
    if (options.wall_budget_s && seconds_since(t0) >= *options.wall_budget_s) break;
  }
  result.wall_time_s = seconds_since(t0);
  result.final_checkpoint = trainer.snapshot();
  if (options.out_dir) {
    const fs::path p = *options.out_dir / "checkpoints" / "final.cfck";
    save_checkpoint(result.final_checkpoint, p);
    result.checkpoints.push_back(p);
  }
  return result;
}

double final_loss(const std::vector<StepRecord>& log) {
  if (log.empty()) throw InputError("final_loss: empty step log");
  const std::size_t n = std::max<std::size_t>(1, log.size() / 10);
  double s = 0.0;
  for (std::size_t i = log.size() - n; i < log.size(); ++i) s += log[i].loss;
  return s / static_cast<double>(n);
}

// -- bench -----------------------------------------------------------------------

long peak_rss_kb() {
  rusage usage{};
  getrusage(RUSAGE_SELF, &usage);
  return usage.ru_maxrss;
}

json BenchReport::to_json() const {
  const auto arm = [](const BenchArm& a) {
    return json{{"mask_ratio", a.mask_ratio},
                {"median_step_s", a.median_step_s},
                {"time_per_million_samples_s", a.time_per_million_samples_s},
                {"timed_steps", a.timed_steps}};
  };
  return {{"batch_size", batch_size}, {"unmasked", arm(unmasked)}, {"masked", arm(masked)},
          {"ratio", ratio},           {"peak_rss_kb", peak_rss_kb}};
}

BenchReport bench(const TrainConfig& config, const Corpus& corpus, std::size_t steps, std::size_t warmup) {
  if (steps < 1) throw ConfigError("steps", "need at least one timed step");
  TrainConfig base = config;
  base.total_steps = static_cast<std::int64_t>(steps + warmup) + 1;
  base.warmup_steps = std::min(base.warmup_steps, base.total_steps - 1);
  base.checkpoint_interval_steps = 0;
  TrainConfig masked_cfg = base;
  masked_cfg.mask_ratio = config.mask_ratio > 0.0 ? config.mask_ratio : 0.5;
  base.mask_ratio = 0.0;
  Trainer plain(base, corpus), masked(masked_cfg, corpus);
  std::vector<double> tp, tm;
  // Arms alternate step by step so drift in machine speed hits both equally.
  for (std::size_t i = 0; i < steps + warmup; ++i) {
    auto t = Clock::now();
    plain.step();
    const double a = seconds_since(t);
    t = Clock::now();
    masked.step();
    const double b = seconds_since(t);
    if (i >= warmup) {
      tp.push_back(a);
      tm.push_back(b);
    }
  }
  BenchReport r;
  r.batch_size = config.batch_size;
  const auto fill = [&](BenchArm& arm, double ratio, const std::vector<double>& times) {
    arm.mask_ratio = ratio;
    arm.median_step_s = median(times);
    arm.time_per_million_samples_s = arm.median_step_s / static_cast<double>(config.batch_size) * 1e6;
    arm.timed_steps = times.size();
  };
  fill(r.unmasked, 0.0, tp);
  fill(r.masked, masked_cfg.mask_ratio, tm);
  r.ratio = r.masked.median_step_s / r.unmasked.median_step_s;
  r.peak_rss_kb = peak_rss_kb();
  return r;
}

// -- ablate ----------------------------------------------------------------------

json AblationReport::to_json() const {
  json arms_j = json::array();
  for (const auto& a : arms)
    arms_j.push_back({{"name", a.name},
                      {"init", to_string(a.init)},
                      {"optimizer", to_string(a.optimizer)},
                      {"mask_ratio", a.mask_ratio},
                      {"steps", a.steps},
                      {"final_loss", a.final_loss},
                      {"wall_time_s", a.wall_time_s},
                      {"zero_shot_top1", a.zero_shot_top1}});
  return {{"prior_steps", prior_steps}, {"arms", arms_j}};
}

std::string AblationReport::table() const {
  std::ostringstream out;
  out << std::left << std::setw(24) << "arm" << std::setw(9) << "init" << std::setw(7) << "optim" << std::setw(6)
      << "mask" << std::right << std::setw(7) << "steps" << std::setw(12) << "final_loss" << std::setw(10) << "wall_s"
      << std::setw(9) << "zs_top1" << '\n';
  for (const auto& a : arms)
    out << std::left << std::setw(24) << a.name << std::setw(9) << to_string(a.init) << std::setw(7)
        << to_string(a.optimizer) << std::setw(6) << std::fixed << std::setprecision(2) << a.mask_ratio << std::right
        << std::setw(7) << a.steps << std::setw(12) << std::setprecision(4) << a.final_loss << std::setw(10)
        << std::setprecision(1) << a.wall_time_s << std::setw(9) << a.zero_shot_top1 << '\n';
  return out.str();
}

AblationReport ablate(const TrainConfig& config, const Corpus& corpus, std::int64_t prior_steps,
                      const std::optional<fs::path>& out_dir) {
  if (prior_steps < 2) throw ConfigError("prior_steps", "the prior run needs at least 2 steps");
  AblationReport report;
  report.prior_steps = prior_steps;
  const auto sub = [&](const std::string& name) -> std::optional<fs::path> {
    if (!out_dir) return std::nullopt;
    return *out_dir / name;
  };

  TrainConfig prior = config;
  prior.seed = config.seed + 1000;
  prior.total_steps = prior_steps;
  prior.warmup_steps = std::min(config.warmup_steps, prior_steps - 1);
  prior.init_policy = InitPolicy::Scratch;
  prior.mask_ratio = 0.0;
  TrainOptions prior_opts;
  prior_opts.out_dir = sub("prior");
  const Checkpoint prior_ckpt = train(prior, corpus, prior_opts).final_checkpoint;

  const auto zero_shot = [&](const TrainConfig& c, const Checkpoint& ck) {
    Trainer probe(c, corpus);
    probe.restore(ck);
    const auto classes = build_class_embeddings(corpus.class_names, kDefaultPromptTemplates,
                                                model_text_encoder(c.model, probe.params()));
    std::vector<std::uint32_t> labels;
    for (const Record& r : corpus.records) labels.push_back(r.class_id);
    return zero_shot_classify(embed_records(corpus, c.model, probe.params()), classes, labels).top1;
  };

  const auto run_arm = [&](const std::string& name, InitPolicy init, OptimizerKind kind, double mask,
                           std::int64_t total, std::optional<double> budget) {
    TrainConfig c = config;
    c.init_policy = InitPolicy::Scratch;
    c.optimizer.kind = kind;
    c.mask_ratio = mask;
    c.total_steps = total;
    Trainer trainer(c, corpus);
    if (init != InitPolicy::Scratch) trainer.initialize_from(prior_ckpt, init, false);
    std::vector<StepRecord> log;
    std::ofstream log_file;
    if (out_dir) {
      fs::create_directories(*out_dir / name);
      log_file.open(*out_dir / name / "steps.ndjson");
    }
    const auto t0 = Clock::now();
    while (!trainer.done()) {
      log.push_back(trainer.step());
      if (log_file.is_open()) log_file << log.back().to_json().dump() << '\n';
      if (budget && seconds_since(t0) >= *budget) break;
    }
    AblationArm arm;
    arm.name = name;
    arm.init = init;
    arm.optimizer = kind;
    arm.mask_ratio = mask;
    arm.wall_time_s = seconds_since(t0);
    arm.steps = trainer.effective_step();
    arm.final_loss = final_loss(log);
    const Checkpoint ck = trainer.snapshot();
    if (out_dir) save_checkpoint(ck, *out_dir / name / "final.cfck");
    arm.zero_shot_top1 = zero_shot(c, ck);
    report.arms.push_back(arm);
    return arm;
  };

  const std::int64_t n = config.total_steps;
  run_arm("scratch-adamw", InitPolicy::Scratch, OptimizerKind::AdamW, 0.0, n, std::nullopt);
  run_arm("init-adamw", InitPolicy::Both, OptimizerKind::AdamW, 0.0, n, std::nullopt);
  const AblationArm lamb = run_arm("init-lamb", InitPolicy::Both, OptimizerKind::Lamb, 0.0, n, std::nullopt);
  const double mask = config.mask_ratio > 0.0 ? config.mask_ratio : 0.5;
  // Equal wall-clock budget; the schedule is sized generously so the budget, not the schedule, ends the run.
  run_arm("init-lamb-masked", InitPolicy::Both, OptimizerKind::Lamb, mask, 4 * n, lamb.wall_time_s);
  if (out_dir) {
    std::ofstream(*out_dir / "ablation.json") << report.to_json().dump(2) << '\n';
    std::ofstream(*out_dir / "ablation.txt") << report.table();
  }
  return report;
}

}  // namespace clipforge
