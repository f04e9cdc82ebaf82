// Copyright (c) 2026, The clipforge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic paired image/caption corpus, binary shard files, augmentation and batching.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "clipforge/rng.hpp"
#include "clipforge/tensor.hpp"
#include "clipforge/tokenizer.hpp"

namespace clipforge {

struct CorpusSpec {
  std::size_t num_classes = 8;
  std::size_t samples_per_class = 16;
  std::size_t image_size = 32;
  std::size_t channels = 3;
  /// Defaults to a built-in list when empty.
  std::vector<std::string> class_names;
  /// Each template contains one "{}" replaced by the class name.
  std::vector<std::string> caption_templates;
  std::uint64_t seed = 0;
  /// Pixel noise standard deviation on the [0, 1] intensity scale.
  double noise = 0.08;
  /// Records per shard file; 0 keeps everything in one shard.
  std::size_t records_per_shard = 0;

  void validate() const;
  std::vector<std::string> resolved_class_names() const;
  std::vector<std::string> resolved_templates() const;

  static CorpusSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// One image/caption pair. Images are 8-bit CHW.
struct Record {
  std::uint32_t class_id = 0;
  std::vector<std::uint8_t> image;
  std::string caption;

  bool operator==(const Record&) const = default;
};

struct Corpus {
  std::size_t image_size = 0;
  std::size_t channels = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> class_names;
  std::vector<std::string> caption_templates;
  std::vector<Record> records;
};

/// Oriented color gratings, one (orientation, frequency, phase, palette) per class,
/// with per-sample phase/contrast jitter and pixel noise. Deterministic per seed.
Corpus generate_corpus(const CorpusSpec& spec);

/// Noise-free class pattern on the [0, 1] scale, CHW.
std::vector<float> class_pattern(std::size_t class_id, std::size_t num_classes, std::size_t image_size,
                                 std::size_t channels);

/// Inverse of the generator: the class whose pattern correlates best with the image.
std::size_t recover_class(std::span<const std::uint8_t> image, std::size_t num_classes, std::size_t image_size,
                          std::size_t channels);

/// Fills "{}" in a template.
std::string fill_template(const std::string& tmpl, const std::string& class_name);

// -- shards ------------------------------------------------------------------

inline constexpr std::uint32_t kShardVersion = 1;

std::vector<std::uint8_t> encode_shard(std::span<const Record> records);
/// Throws FormatError on a bad magic/version and CorruptionError (with offset) on truncation.
std::vector<Record> decode_shard(std::span<const std::uint8_t> bytes);

void write_shard(std::span<const Record> records, const std::filesystem::path& path);
std::vector<Record> read_shard(const std::filesystem::path& path);

/// Streams records from one shard file in order.
class ShardReader {
 public:
  explicit ShardReader(const std::filesystem::path& path);
  std::uint64_t record_count() const { return count_; }
  /// Next record, or false at the end.
  bool next(Record& out);

 private:
  std::vector<std::uint8_t> bytes_;
  std::size_t offset_ = 0;
  std::uint64_t count_ = 0;
  std::uint64_t read_ = 0;
};

/// Writes shards plus manifest.json, classes.txt and templates.txt into `dir`.
/// Returns the manifest path.
std::filesystem::path write_corpus(const Corpus& corpus, const std::filesystem::path& dir,
                                   std::size_t records_per_shard = 0);
Corpus load_corpus(const std::filesystem::path& manifest);

// -- augmentation and batching -----------------------------------------------

/// u8 CHW -> float CHW on [-1, 1].
std::vector<float> image_to_float(std::span<const std::uint8_t> image);

/// Square crop covering a uniform area fraction in [lo, hi] at a uniform position,
/// resized back to the input extent bilinearly. image is CHW with square planes.
std::vector<float> random_resized_crop(std::span<const float> image, std::size_t channels, std::size_t size, double lo,
                                       double hi, Rng& rng);

struct Batch {
  Tensor images;  // [b × c × H × W]
  TokenBatch tokens;
  std::vector<std::size_t> record_indices;
  std::vector<std::uint32_t> labels;
};

struct AugmentSpec {
  bool enabled = true;
  double crop_lo = 0.9;
  double crop_hi = 1.0;
};

/// Assembles a batch. Augmentation runs only when `training` is true (and requires rng).
Batch make_batch(const Corpus& corpus, std::span<const std::size_t> indices, bool training, const AugmentSpec& augment,
                 Rng* rng, const TokenizerSpec& tokenizer = {});

/// Record order as a stream of per-epoch permutations derived from (seed, epoch).
/// Batches may straddle an epoch boundary; within an epoch every record appears once.
class Batcher {
 public:
  Batcher(std::size_t num_records, std::size_t batch_size, std::uint64_t seed);

  std::vector<std::size_t> next();

  std::uint64_t epoch() const { return epoch_; }
  std::size_t cursor() const { return cursor_; }
  void set_position(std::uint64_t epoch, std::size_t cursor);

  /// The permutation used for an epoch.
  std::vector<std::size_t> permutation(std::uint64_t epoch) const;

 private:
  std::size_t num_records_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
};

}  // namespace clipforge
