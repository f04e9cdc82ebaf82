// Copyright (c) 2026, The clipforge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint files: JSON metadata, named float32 tensors and optimizer moments.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "clipforge/model.hpp"
#include "clipforge/optim.hpp"
#include "clipforge/tensor.hpp"

namespace clipforge {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;

  bool operator==(const NamedArray&) const = default;
};

struct Checkpoint {
  /// Free-form metadata (step counters, rng state, configs). Serialized with sorted keys.
  nlohmann::json metadata = nlohmann::json::object();
  /// Parameters in model order.
  std::vector<NamedArray> tensors;
  /// Optimizer moments per parameter name.
  std::map<std::string, MomentState> optimizer;

  const NamedArray* find(const std::string& name) const;
};

/// Layout, little-endian: "CFCK", u32 version, u64 metadata length + JSON bytes,
/// u64 tensor count, name table {u32 name length, name, u32 rank, u64 dims...},
/// float32 payloads in table order, u64 moment count, then per entry
/// {u32 name length, name, i64 step, u64 n, n float32 m, n float32 v}.
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
/// FormatError on bad magic/version, CorruptionError with the byte offset on truncation.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies every parameter (data only) into a checkpoint tensor table.
std::vector<NamedArray> snapshot_params(const ParamStore& params);

}  // namespace clipforge
