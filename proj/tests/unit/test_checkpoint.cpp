// Copyright (c) 2026, The clipforge Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <vector>

#include "clipforge/checkpoint.hpp"
#include "clipforge/errors.hpp"
#include "oracles.hpp"

namespace clipforge {
namespace {

Checkpoint sample_checkpoint() {
  const ModelConfig cfg = presets::b16_shrunk(32, 8);
  Rng rng(1);
  const ParamStore p = init_params(cfg, rng);
  Checkpoint ck;
  ck.metadata = {{"format", "test"}, {"step", 12}, {"nested", {{"b", 2}, {"a", 1}}}};
  ck.tensors = snapshot_params(p);
  MomentState m;
  m.m = testing::random_values(5, 2);
  m.v = testing::random_values(5, 3);
  m.step = 7;
  ck.optimizer["visual.norm.bias"] = m;
  return ck;
}

std::vector<std::uint8_t> file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

TEST(Checkpoint, EncodeDecodeRoundTrip) {
  const Checkpoint ck = sample_checkpoint();
  const Checkpoint back = decode_checkpoint(encode_checkpoint(ck));
  EXPECT_EQ(back.metadata, ck.metadata);
  EXPECT_EQ(back.tensors, ck.tensors);
  ASSERT_EQ(back.optimizer.size(), 1u);
  const MomentState& m = back.optimizer.at("visual.norm.bias");
  EXPECT_EQ(m.m, ck.optimizer.at("visual.norm.bias").m);
  EXPECT_EQ(m.v, ck.optimizer.at("visual.norm.bias").v);
  EXPECT_EQ(m.step, 7);
  ASSERT_NE(back.find("logit_scale"), nullptr);
  EXPECT_EQ(back.find("nope"), nullptr);
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  testing::TempDir dir("ckpt");
  save_checkpoint(sample_checkpoint(), dir.path() / "a.cfck");
  save_checkpoint(load_checkpoint(dir.path() / "a.cfck"), dir.path() / "b.cfck");
  EXPECT_EQ(file_bytes(dir.path() / "a.cfck"), file_bytes(dir.path() / "b.cfck"));
}

TEST(Checkpoint, NonFiniteValuesSurviveBitExactly) {
  Checkpoint ck;
  ck.tensors.push_back({"x", {3}, {std::numeric_limits<float>::infinity(), -0.0f, 1e-45f}});
  const Checkpoint back = decode_checkpoint(encode_checkpoint(ck));
  EXPECT_EQ(std::memcmp(back.tensors[0].values.data(), ck.tensors[0].values.data(), 3 * sizeof(float)), 0);
}

TEST(Checkpoint, TruncationAndBadMagic) {
  const auto bytes = encode_checkpoint(sample_checkpoint());
  for (std::size_t cut : {bytes.size() - 1, bytes.size() / 2, std::size_t{10}}) {
    std::vector<std::uint8_t> t(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    try {
      decode_checkpoint(t);
      FAIL() << "expected CorruptionError at cut " << cut;
    } catch (const CorruptionError& e) {
      EXPECT_LE(e.offset(), cut);
    }
  }
  auto bad = bytes;
  bad[1] = 'Z';
  EXPECT_THROW(decode_checkpoint(bad), FormatError);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/x.cfck"), FormatError);
}

}  // namespace
}  // namespace clipforge
