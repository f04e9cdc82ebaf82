// Copyright (c) 2026, The clipforge Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "clipforge/checkpoint.hpp"
#include "clipforge/errors.hpp"
#include "clipforge/eval.hpp"
#include "clipforge/trainer.hpp"
#include "oracles.hpp"

namespace clipforge {
namespace {

TrainConfig tiny(std::int64_t total = 40) {
  TrainConfig c;
  c.model = presets::b16_shrunk(16, 8);
  c.batch_size = 8;
  c.total_steps = total;
  c.warmup_steps = 4;
  c.data_num_classes = 4;
  c.data_samples_per_class = 6;
  c.seed = 21;
  return c;
}

// Smallest model that still exercises every code path; used for long schedules.
TrainConfig micro(std::int64_t total) {
  TrainConfig c = TrainConfig::from_json({{"image_size_px", 8},
                                          {"patch_size_px", 4},
                                          {"image_layers", 1},
                                          {"image_width", 16},
                                          {"image_heads", 1},
                                          {"text_layers", 1},
                                          {"text_width", 16},
                                          {"text_heads", 1},
                                          {"context_length_tokens", 8},
                                          {"batch_size", 2},
                                          {"total_steps", total},
                                          {"warmup_steps", total / 2},
                                          {"data_num_classes", 2},
                                          {"data_samples_per_class", 2}});
  return c;
}

std::vector<nlohmann::json> comparable(const std::vector<StepRecord>& log) {
  std::vector<nlohmann::json> out;
  for (const auto& r : log) out.push_back(r.to_json(false));
  return out;
}

bool same_params(const ParamStore& a, const ParamStore& b) {
  for (const auto& [name, t] : a) {
    const Tensor& u = b.at(name);
    if (t.numel() != u.numel() || std::memcmp(t.data().data(), u.data().data(), t.numel() * sizeof(float)) != 0)
      return false;
  }
  return true;
}

void poison(ParamStore& p) {
  for (auto& [name, t] : p)
    if (t.has_grad()) {
      t.mutable_grad()[0] = std::numeric_limits<float>::infinity();
      return;
    }
}

TEST(Trainer, FixedSeedGivesIdenticalLogs) {
  const TrainConfig c = tiny(50);
  const Corpus corpus = resolve_corpus(c);
  const TrainResult a = train(c, corpus), b = train(c, corpus);
  ASSERT_EQ(a.log.size(), 50u);
  EXPECT_EQ(comparable(a.log), comparable(b.log));
  EXPECT_EQ(encode_checkpoint(a.final_checkpoint), encode_checkpoint(b.final_checkpoint));
}

TEST(Trainer, ResumeIsBitExactForTenSteps) {
  const TrainConfig c = tiny(30);
  const Corpus corpus = resolve_corpus(c);
  Trainer straight(c, corpus);
  std::vector<StepRecord> tail_a;
  for (int i = 0; i < 20; ++i) {
    StepRecord r = straight.step();
    if (i >= 10) tail_a.push_back(r);
  }
  Trainer first(c, corpus);
  for (int i = 0; i < 10; ++i) first.step();
  const Checkpoint saved = decode_checkpoint(encode_checkpoint(first.snapshot()));
  Trainer resumed(c, corpus);
  resumed.restore(saved);
  std::vector<StepRecord> tail_b;
  for (int i = 0; i < 10; ++i) tail_b.push_back(resumed.step());
  EXPECT_EQ(comparable(tail_a), comparable(tail_b));
  EXPECT_TRUE(same_params(straight.params(), resumed.params()));
  EXPECT_EQ(encode_checkpoint(straight.snapshot()), encode_checkpoint(resumed.snapshot()));
}

TEST(Trainer, InjectedOverflowSkipsStepHalvesScaleAndKeepsParameters) {
  const TrainConfig c = tiny(10);
  const Corpus corpus = resolve_corpus(c);
  Trainer t(c, corpus);
  t.step();
  t.step();
  t.gradient_hook = [](ParamStore& p, std::int64_t step) {
    if (step == 3) poison(p);
  };
  const Checkpoint before = t.snapshot();
  const double scale_before = t.scaler().scale;
  const StepRecord r = t.step();
  EXPECT_TRUE(r.overflow);
  EXPECT_EQ(r.step, 3);
  EXPECT_EQ(r.effective_step, 2);
  EXPECT_EQ(r.loss_scale, scale_before);
  EXPECT_EQ(t.scaler().scale, scale_before * 0.5);
  EXPECT_EQ(before.tensors, t.snapshot().tensors);
  EXPECT_EQ(t.samples_seen(), 2u * c.batch_size);
  const StepRecord next = t.step();
  EXPECT_FALSE(next.overflow);
  EXPECT_EQ(next.effective_step, 3);
}

TEST(Trainer, SamplesSeenCountsOnlyAppliedStepsAndLogHasEveryAttempt) {
  TrainConfig c = tiny(12);
  const Corpus corpus = resolve_corpus(c);
  testing::TempDir dir("train");
  TrainOptions opts;
  opts.out_dir = dir.path();
  opts.gradient_hook = [](ParamStore& p, std::int64_t step) {
    if (step % 4 == 0) poison(p);
  };
  const TrainResult r = train(c, corpus, opts);
  std::size_t skipped = 0;
  for (const auto& rec : r.log) skipped += rec.overflow;
  EXPECT_EQ(skipped, 3u);  // attempts 4, 8 and 12 overflow; the run needs 15 attempts for 12 updates
  EXPECT_EQ(r.log.size(), 15u);
  EXPECT_EQ(r.final_checkpoint.metadata.at("samples_seen").get<std::uint64_t>(), c.batch_size * 12u);
  EXPECT_EQ(r.final_checkpoint.metadata.at("attempted_step").get<std::int64_t>(), 15);
  std::ifstream log(dir.path() / "steps.ndjson");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(log, line)) {
    const StepRecord rec = StepRecord::from_json(nlohmann::json::parse(line));
    EXPECT_EQ(rec.step, static_cast<std::int64_t>(++lines));
  }
  EXPECT_EQ(lines, 15u);
  // Every 10% of 12 steps rounds up to every 2 steps, plus the final checkpoint.
  EXPECT_EQ(r.checkpoints.size(), 6u);
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "checkpoints" / "final.cfck"));
}

TEST(Trainer, RepeatedOverflowDiverges) {
  TrainConfig c = tiny(10);
  c.loss_scale_initial = 0x1p-17;
  const Corpus corpus = resolve_corpus(c);
  TrainOptions opts;
  opts.gradient_hook = [](ParamStore& p, std::int64_t) { poison(p); };
  try {
    train(c, corpus, opts);
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_EQ(e.records().size(), 4u);
    EXPECT_TRUE(e.records().back().overflow);
  }
}

TEST(Trainer, RecordedLearningRatesMatchScheduleAndLayerScales) {
  TrainConfig c = tiny(20);
  c.image_peak_lr = 1e-3;
  c.text_peak_lr = 5e-4;
  c.logit_scale_peak_lr = 2e-3;
  c.image_layer_decay = 0.75;
  c.text_layer_decay = 0.85;
  const Corpus corpus = resolve_corpus(c);
  Trainer t(c, corpus);
  const auto vs = layer_scales(0.75, c.model.image.layers), ts = layer_scales(0.85, c.model.text.layers);
  for (int i = 0; i < 20; ++i) {
    const StepRecord r = t.step();
    const double f = lr_at(c.schedule_spec(), 1.0, r.effective_step);
    EXPECT_NEAR(r.lr.at("visual"), 1e-3 * f, 1e-15);
    EXPECT_NEAR(r.lr.at("text"), 5e-4 * f, 1e-15);
    EXPECT_NEAR(r.lr.at("logit_scale"), 2e-3 * f, 1e-15);
    for (const auto& [name, lr] : t.optimizer().last_lrs()) {
      const std::string tower = param_tower(name);
      const double peak = tower == "visual" ? 1e-3 * vs[param_depth(name, c.model.image.layers)]
                          : tower == "text" ? 5e-4 * ts[param_depth(name, c.model.text.layers)]
                                            : 2e-3;
      EXPECT_NEAR(lr, peak * f, 1e-15) << name;
    }
  }
}

TEST(Trainer, WarmupMidpointLearningRateIsHalfPeak) {
  TrainConfig c = micro(2001);
  c.warmup_steps = 2000;
  c.image_peak_lr = 4e-4;
  const Corpus corpus = resolve_corpus(c);
  Trainer t(c, corpus);
  StepRecord r;
  while (t.effective_step() < 1000) r = t.step();
  EXPECT_EQ(r.effective_step, 1000);
  EXPECT_DOUBLE_EQ(r.lr.at("visual"), 0.5 * 4e-4);
}

TEST(Trainer, LogitScaleNeverExceedsClamp) {
  TrainConfig c = tiny(30);
  c.model.init_log_scale = std::log(100.0) - 1e-3;
  c.logit_scale_peak_lr = 0.5;
  c.warmup_steps = 0;
  const Corpus corpus = resolve_corpus(c);
  for (const auto& r : train(c, corpus).log) EXPECT_LE(r.logit_scale, 100.0 * (1 + 1e-6));
}

TEST(Trainer, OverfitsEightPairs) {
  TrainConfig c;
  c.model = presets::b16_shrunk(32, 8);
  c.batch_size = 8;
  c.total_steps = 500;
  c.warmup_steps = 20;
  c.mask_ratio = 0.0;
  c.augment.enabled = false;
  c.data_num_classes = 8;
  c.data_samples_per_class = 1;
  const Corpus corpus = resolve_corpus(c);
  double first_below = -1;
  const TrainResult r = train(c, corpus);
  for (const auto& rec : r.log)
    if (first_below < 0 && rec.loss < 0.05) first_below = static_cast<double>(rec.step);
  EXPECT_NEAR(r.log.front().loss, std::log(8.0), 0.2);
  EXPECT_GT(first_below, 0);
  EXPECT_LT(r.log.back().loss, 0.05);

  Trainer probe(c, corpus);
  probe.restore(r.final_checkpoint);
  const auto classes = testing::classes_from_pair_prompts(corpus, model_text_encoder(c.model, probe.params()));
  std::vector<std::uint32_t> labels;
  for (const auto& rec : corpus.records) labels.push_back(rec.class_id);
  const Tensor img = embed_records(corpus, c.model, probe.params());
  EXPECT_EQ(zero_shot_classify(img, classes, labels).top1, 100.0);
  std::vector<std::string> captions;
  std::vector<std::vector<std::size_t>> truth;
  for (std::size_t i = 0; i < corpus.records.size(); ++i) {
    captions.push_back(corpus.records[i].caption);
    truth.push_back({i});
  }
  const RetrievalTable rt = retrieval(img, model_text_encoder(c.model, probe.params())(captions), truth);
  EXPECT_EQ(rt.text_retrieval.at(1), 100.0);
  EXPECT_EQ(rt.image_retrieval.at(1), 100.0);
}

TEST(InitFromCheckpoint, SelfReloadLoadsEverything) {
  const TrainConfig c = tiny();
  const Corpus corpus = resolve_corpus(c);
  Trainer a(c, corpus);
  a.step();
  Trainer b(c, corpus);
  const InitReport r = b.initialize_from(a.snapshot(), InitPolicy::Both, true);
  EXPECT_EQ(r.loaded.size(), b.params().size());
  EXPECT_TRUE(r.missing.empty());
  EXPECT_TRUE(r.resampled.empty());
  EXPECT_TRUE(same_params(a.params(), b.params()));
}

TEST(InitFromCheckpoint, HigherResolutionResamplesOnlyPositionalTable) {
  const ModelConfig low = presets::b16_shrunk(224, 16), high = presets::b16_shrunk(336, 16);
  Rng r1(1), r2(2);
  const ParamStore src = init_params(low, r1);
  ParamStore dst = init_params(high, r2);
  Checkpoint ck;
  ck.tensors = snapshot_params(src);
  const InitReport rep = init_from_checkpoint(dst, high, ck, InitPolicy::Both, true);
  EXPECT_EQ(rep.resampled, std::vector<std::string>{"visual.pos_embed"});
  EXPECT_EQ(rep.loaded.size(), dst.size() - 1);
  EXPECT_TRUE(rep.missing.empty());
  EXPECT_EQ(dst.at("visual.pos_embed").shape(), (Shape{1 + 21 * 21, 64}));
  EXPECT_EQ(dst.at("visual.pos_embed").at(0), src.at("visual.pos_embed").at(0));
}

TEST(InitFromCheckpoint, TextOnlyCheckpointLeavesImageTowerFresh) {
  const ModelConfig cfg = presets::b16_shrunk(32, 8);
  Rng r1(1), r2(2);
  const ParamStore src = init_params(cfg, r1);
  ParamStore dst = init_params(cfg, r2);
  const ParamStore untouched = [&] {
    Rng r(2);
    return init_params(cfg, r);
  }();
  Checkpoint ck;
  for (const auto& a : snapshot_params(src))
    if (param_tower(a.name) == "text") ck.tensors.push_back(a);
  const InitReport rep = init_from_checkpoint(dst, cfg, ck, InitPolicy::Both, false);
  for (const auto& [name, t] : dst) {
    const bool text = param_tower(name) == "text";
    const bool listed_fresh = std::find(rep.fresh.begin(), rep.fresh.end(), name) != rep.fresh.end();
    EXPECT_EQ(listed_fresh, !text) << name;
    if (!text) EXPECT_EQ(std::memcmp(t.data().data(), untouched.at(name).data().data(), t.numel() * 4), 0) << name;
  }
  ParamStore strict_dst = init_params(cfg, r2);
  try {
    init_from_checkpoint(strict_dst, cfg, ck, InitPolicy::Both, true);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("visual."), std::string::npos);
  }
}

TEST(InitFromCheckpoint, ImagePolicyLeavesTextTowerAlone) {
  const ModelConfig cfg = presets::b16_shrunk(32, 8);
  Rng r1(1), r2(2);
  const ParamStore src = init_params(cfg, r1);
  ParamStore dst = init_params(cfg, r2);
  Checkpoint ck;
  ck.tensors = snapshot_params(src);
  const InitReport rep = init_from_checkpoint(dst, cfg, ck, InitPolicy::Image, true);
  for (const auto& name : rep.loaded) EXPECT_EQ(param_tower(name), "visual");
  EXPECT_TRUE(rep.missing.empty());
  EXPECT_NE(dst.at("text.proj").at(0), src.at("text.proj").at(0));
}

TEST(TrainConfig, JsonRoundTripOverridesAndErrors) {
  TrainConfig c = tiny();
  const TrainConfig back = TrainConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(c.to_json().at("samples_seen").get<std::uint64_t>(), c.batch_size * 40u);

  c.apply_override("mask_ratio=0.25");
  c.apply_override("optimizer=adamw");
  c.apply_override("schedule=linear");
  EXPECT_EQ(c.mask_ratio, 0.25);
  EXPECT_EQ(c.optimizer.kind, OptimizerKind::AdamW);
  EXPECT_EQ(c.schedule, ScheduleShape::Linear);
  try {
    c.apply_override("bogus=1");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "bogus");
  }
  EXPECT_THROW(c.apply_override("mask_ratio=1.5"), ConfigError);
  EXPECT_THROW(c.apply_override("batch_size=\"x\""), ConfigError);
  nlohmann::json j = c.to_json();
  j["samples_seen"] = 3;
  EXPECT_THROW(TrainConfig::from_json(j), ConfigError);
}

TEST(TrainConfig, CorpusMustMatchModelResolution) {
  const TrainConfig c = tiny();
  TrainConfig other = c;
  other.model = presets::b16_shrunk(32, 8);
  const Corpus corpus = resolve_corpus(c);
  EXPECT_THROW(Trainer(other, corpus), ConfigError);
}

TEST(StepRecord, JsonRoundTripWithNonFiniteLoss) {
  StepRecord r;
  r.step = 4;
  r.effective_step = 3;
  r.loss = std::nan("");
  r.lr = {{"visual", 1e-3}};
  r.overflow = true;
  r.loss_scale = 1024;
  const nlohmann::json j = r.to_json(false);
  EXPECT_TRUE(j.at("loss").is_null());
  const StepRecord back = StepRecord::from_json(j);
  EXPECT_TRUE(std::isnan(back.loss));
  EXPECT_EQ(back.to_json(false), j);
}

TEST(Bench, RepeatedRunsAgreeWithinTenPercent) {
  TrainConfig c;
  c.model = presets::b16_shrunk(112, 8);
  c.batch_size = 32;
  c.mask_ratio = 0.5;
  const Corpus corpus = resolve_corpus(c);
  const BenchReport a = bench(c, corpus, 20), b = bench(c, corpus, 20);
  EXPECT_EQ(a.unmasked.timed_steps, 20u);
  EXPECT_EQ(a.masked.mask_ratio, 0.5);
  EXPECT_GT(a.peak_rss_kb, 0);
  EXPECT_NEAR(a.ratio, b.ratio, 0.1 * a.ratio);
  EXPECT_LT(a.ratio, 1.0);
}

}  // namespace
}  // namespace clipforge
