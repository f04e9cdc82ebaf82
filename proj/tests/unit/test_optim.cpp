// Copyright (c) 2026, The clipforge Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

#include "clipforge/errors.hpp"
#include "clipforge/optim.hpp"
#include "clipforge/trainer.hpp"
#include "oracles.hpp"

namespace clipforge {
namespace {

using testing::ScalarOptimizerOracle;

OptimizerConfig recipe_config(OptimizerKind kind, double lambda) {
  OptimizerConfig c;
  c.kind = kind;
  c.beta1 = 0.9;
  c.beta2 = 0.98;
  c.eps = 1e-6;
  c.weight_decay = lambda;
  return c;
}

bool step_with(OptimizerKind kind, std::span<float> w, std::span<const float> g, MomentState& s,
               const OptimizerConfig& cfg, double lr, bool exempt = false) {
  return kind == OptimizerKind::Lamb ? lamb_step(w, g, s, cfg, lr, exempt) : adamw_step(w, g, s, cfg, lr, exempt);
}

TEST(Optimizers, ZeroGradientWithoutDecayLeavesParametersUnchanged) {
  for (OptimizerKind kind : {OptimizerKind::Lamb, OptimizerKind::AdamW}) {
    const auto cfg = recipe_config(kind, 0.0);
    std::vector<float> w = {1.0f, -2.0f, 0.5f}, g(3, 0.0f);
    const auto w0 = w;
    MomentState s;
    for (int i = 0; i < 5; ++i) ASSERT_TRUE(step_with(kind, w, g, s, cfg, 0.1));
    EXPECT_EQ(w, w0) << to_string(kind);
  }
}

TEST(Optimizers, SingleScalarStepMatchesOracle) {
  for (OptimizerKind kind : {OptimizerKind::Lamb, OptimizerKind::AdamW}) {
    const auto cfg = recipe_config(kind, 0.0);
    std::vector<float> w = {1.0f}, g = {1.0f};
    MomentState s;
    ASSERT_TRUE(step_with(kind, w, g, s, cfg, 0.1));
    ScalarOptimizerOracle oracle({1.0});
    oracle.lamb = kind == OptimizerKind::Lamb;
    oracle.step({1.0}, 0.1);
    EXPECT_NEAR(w[0], oracle.w[0], 1e-6 * std::abs(oracle.w[0])) << to_string(kind);
    EXPECT_EQ(s.step, 1);
  }
}

TEST(Optimizers, HundredStepsMatchOracleWithRecipeHyperparameters) {
  for (OptimizerKind kind : {OptimizerKind::Lamb, OptimizerKind::AdamW}) {
    const auto cfg = recipe_config(kind, 0.05);
    const std::size_t n = 16;
    std::vector<float> w = testing::random_values(n, 3);
    std::vector<double> w0(w.begin(), w.end());
    ScalarOptimizerOracle oracle(w0);
    oracle.lamb = kind == OptimizerKind::Lamb;
    oracle.lambda = 0.05;
    MomentState s;
    Rng rng(9);
    for (int t = 0; t < 100; ++t) {
      std::vector<float> g(n);
      for (float& x : g) x = static_cast<float>(rng.normal());
      ASSERT_TRUE(step_with(kind, w, g, s, cfg, 1e-3));
      oracle.step(std::vector<double>(g.begin(), g.end()), 1e-3);
    }
    for (std::size_t i = 0; i < n; ++i)
      EXPECT_NEAR(w[i], oracle.w[i], 1e-6 * std::max(1.0, std::abs(oracle.w[i]))) << to_string(kind) << " " << i;
  }
}

TEST(Optimizers, LambWithUnitTrustRatioAndNoDecayEqualsAdamW) {
  auto lamb_cfg = recipe_config(OptimizerKind::Lamb, 0.0);
  lamb_cfg.force_unit_trust_ratio = true;
  const auto adam_cfg = recipe_config(OptimizerKind::AdamW, 0.0);
  std::vector<float> a = testing::random_values(32, 5), b = a;
  MomentState sa, sb;
  Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    std::vector<float> g(32);
    for (float& x : g) x = static_cast<float>(rng.normal());
    lamb_step(a, g, sa, lamb_cfg, 3e-3);
    adamw_step(b, g, sb, adam_cfg, 3e-3);
  }
  EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)), 0);
  EXPECT_EQ(sa.m, sb.m);
  EXPECT_EQ(sa.v, sb.v);
}

TEST(Optimizers, NonFiniteGradientSignalsOverflowAndTouchesNothing) {
  for (OptimizerKind kind : {OptimizerKind::Lamb, OptimizerKind::AdamW}) {
    const auto cfg = recipe_config(kind, 0.05);
    std::vector<float> w = {1.0f, 2.0f};
    MomentState s;
    std::vector<float> g = {0.5f, std::numeric_limits<float>::infinity()};
    EXPECT_FALSE(step_with(kind, w, g, s, cfg, 0.1));
    EXPECT_EQ(w, (std::vector<float>{1.0f, 2.0f}));
    EXPECT_EQ(s.step, 0);
    g[1] = std::numeric_limits<float>::quiet_NaN();
    EXPECT_FALSE(step_with(kind, w, g, s, cfg, 0.1));
  }
}

TEST(Optimizers, DecayExemptTensorsAreFixedPointsUnderZeroGradient) {
  for (OptimizerKind kind : {OptimizerKind::Lamb, OptimizerKind::AdamW}) {
    const auto cfg = recipe_config(kind, 0.05);
    std::vector<float> exempt = {0.3f, -1.0f}, decayed = {0.3f, -1.0f}, g(2, 0.0f);
    MomentState s1, s2;
    for (int t = 0; t < 10; ++t) {
      step_with(kind, exempt, g, s1, cfg, 0.1, true);
      step_with(kind, decayed, g, s2, cfg, 0.1, false);
    }
    EXPECT_EQ(exempt, (std::vector<float>{0.3f, -1.0f}));
    EXPECT_LT(std::abs(decayed[1]), 1.0f);
  }
}

TEST(Optimizers, LambDirectionIgnoresGradientScaleOnceMomentsSaturate) {
  const auto cfg = recipe_config(OptimizerKind::Lamb, 0.0);
  const std::vector<float> w0 = testing::random_values(24, 8);
  const std::vector<float> g0 = testing::random_values(24, 9);
  auto run = [&](float factor) {
    std::vector<float> w = w0, g(g0.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = factor * g0[i];
    MomentState s;
    for (int t = 0; t < 200; ++t) lamb_step(w, g, s, cfg, 1e-3);
    const std::vector<float> before = w;
    lamb_step(w, g, s, cfg, 1e-3);
    std::vector<double> d(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) d[i] = static_cast<double>(w[i]) - before[i];
    return d;
  };
  const auto a = run(1.0f), b = run(10.0f);
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  EXPECT_GT(dot / std::sqrt(na * nb), 0.999);
}

TEST(Optimizers, ConvexQuadraticConvergesForBoth) {
  for (OptimizerKind kind : {OptimizerKind::Lamb, OptimizerKind::AdamW}) {
    ParamStore p;
    p.add("w", Tensor::from({10}, std::vector<float>(10, 0.0f), true));
    const std::vector<double> curv = {0.5, 1, 1.5, 2, 3, 4, 5, 6, 8, 10};
    const std::vector<double> centre = {1, -1, 0.5, 2, -0.25, 0.75, -2, 1.5, 0.1, -0.6};
    OptimizerConfig cfg = recipe_config(kind, 0.0);
    const std::int64_t total = 5000;
    Optimizer opt(cfg, {ParamGroup{"all", {"w"}, 0.05, 1.0, 0}}, Schedule{100, total, ScheduleShape::Cosine});
    for (std::int64_t step = 1; step <= total; ++step) {
      Tensor& w = p.at("w");
      w.zero_grad();
      auto g = w.mutable_grad();
      for (std::size_t i = 0; i < 10; ++i) g[i] = static_cast<float>(curv[i] * (w.at(i) - centre[i]));
      ASSERT_TRUE(opt.step(p, step));
    }
    for (std::size_t i = 0; i < 10; ++i) EXPECT_NEAR(p.at("w").at(i), centre[i], 1e-6) << to_string(kind) << " " << i;
  }
}

TEST(LayerScales, ClosedForms) {
  for (double s : layer_scales(1.0, 12)) EXPECT_EQ(s, 1.0);
  const auto s = layer_scales(0.75, 12);
  ASSERT_EQ(s.size(), 14u);
  EXPECT_DOUBLE_EQ(s[13], 1.0);
  EXPECT_DOUBLE_EQ(s[12], 0.75);
  EXPECT_NEAR(s[0], 0.023757, 1e-6);
  for (std::size_t i = 1; i < s.size(); ++i) EXPECT_GT(s[i], s[i - 1]);
  EXPECT_THROW(layer_scales(0.0, 3), ConfigError);
  EXPECT_THROW(layer_scales(1.5, 3), ConfigError);
}

TEST(Schedule, WarmupAndDecayBoundaries) {
  for (ScheduleShape shape : {ScheduleShape::Cosine, ScheduleShape::Linear}) {
    const Schedule s{2000, 10000, shape};
    EXPECT_EQ(lr_at(s, 1.0, 0), 0.0);
    EXPECT_DOUBLE_EQ(lr_at(s, 3e-4, 1000), 1.5e-4);
    EXPECT_DOUBLE_EQ(lr_at(s, 3e-4, 2000), 3e-4);
    EXPECT_NEAR(lr_at(s, 3e-4, 10000), 0.0, 1e-18);
    EXPECT_NEAR(lr_at(s, 3e-4, 6000), 1.5e-4, 1e-12);
    EXPECT_THROW(lr_at(s, 1.0, 10001), RangeError);
  }
  EXPECT_THROW(lr_at(Schedule{10, 5, ScheduleShape::Cosine}, 1.0, 1), ConfigError);
}

TEST(LossScaler, BackoffGrowthAndReset) {
  LossScalerState s;
  s.scale = 32768.0;
  EXPECT_FALSE(scaler_update(s, true));
  EXPECT_EQ(s.scale, 16384.0);

  LossScalerState g;
  for (int i = 0; i < 1999; ++i) ASSERT_TRUE(scaler_update(g, false));
  EXPECT_EQ(g.scale, 32768.0);
  EXPECT_TRUE(scaler_update(g, false));
  EXPECT_EQ(g.scale, 65536.0);
  EXPECT_EQ(g.good_steps, 0);

  LossScalerState a;
  double prev = a.scale;
  for (int i = 0; i < 20; ++i) {
    scaler_update(a, true);
    EXPECT_EQ(a.scale, prev * 0.5);
    prev = a.scale;
    scaler_update(a, false);
    EXPECT_EQ(a.scale, prev);
  }
}

TEST(LossScaler, UnderflowIsDivergence) {
  LossScalerState s;
  s.scale = 0x1p-19;
  EXPECT_FALSE(scaler_update(s, true));
  EXPECT_THROW(scaler_update(s, true), DivergenceError);
}

TEST(ParamGroups, EveryParameterInExactlyOneGroupWithAnalyticLearningRates) {
  const ModelConfig cfg = presets::b16_shrunk(32, 8);
  Rng rng(0);
  ParamStore p = init_params(cfg, rng);
  const auto groups = make_param_groups(p, cfg, 2e-4, 0.75, 3e-5, 0.85, 1e-3);
  ASSERT_EQ(groups.size(), 3u);
  std::size_t members = 0;
  for (const auto& g : groups) members += g.members.size();
  EXPECT_EQ(members, p.size());
  const Schedule sched{10, 100, ScheduleShape::Cosine};
  Optimizer opt(OptimizerConfig{}, groups, sched);
  EXPECT_NO_THROW(opt.validate_groups(p));
  const auto vs = layer_scales(0.75, cfg.image.layers), ts = layer_scales(0.85, cfg.text.layers);
  for (std::int64_t step : {0, 5, 10, 50, 100})
    for (const auto& [name, t] : p) {
      const std::string tower = param_tower(name);
      double want = 0.0;
      if (tower == "visual")
        want = 2e-4 * vs[param_depth(name, cfg.image.layers)] * lr_at(sched, 1.0, step);
      else if (tower == "text")
        want = 3e-5 * ts[param_depth(name, cfg.text.layers)] * lr_at(sched, 1.0, step);
      else
        want = 1e-3 * lr_at(sched, 1.0, step);
      EXPECT_NEAR(opt.lr_for(name, step), want, 1e-15) << name << " @" << step;
    }
}

TEST(ParamGroups, UnassignedParameterIsRejected) {
  const ModelConfig cfg = presets::b16_shrunk(32, 8);
  Rng rng(0);
  ParamStore p = init_params(cfg, rng);
  auto groups = make_param_groups(p, cfg, 1e-3, 0.9, 1e-3, 0.9, 1e-3);
  groups[0].members.pop_back();
  Optimizer opt(OptimizerConfig{}, groups, Schedule{0, 10, ScheduleShape::Linear});
  EXPECT_THROW(opt.validate_groups(p), ConfigError);
  groups[1].members.push_back(groups[0].members.front());
  EXPECT_THROW(Optimizer(OptimizerConfig{}, groups, Schedule{0, 10, ScheduleShape::Linear}), ConfigError);
}

TEST(OptimizerConfig, RecipeHyperparametersRoundTripThroughSerialization) {
  TrainConfig c;
  c.optimizer = recipe_config(OptimizerKind::Lamb, 0.05);
  const TrainConfig back = TrainConfig::from_json(nlohmann::json::parse(c.to_json().dump()));
  EXPECT_EQ(back.optimizer, c.optimizer);
  EXPECT_EQ(back.optimizer.beta1, 0.9);
  EXPECT_EQ(back.optimizer.beta2, 0.98);
  EXPECT_EQ(back.optimizer.eps, 1e-6);
  EXPECT_EQ(back.optimizer.weight_decay, 0.05);
  OptimizerConfig bad;
  bad.beta2 = 1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

}  // namespace
}  // namespace clipforge
