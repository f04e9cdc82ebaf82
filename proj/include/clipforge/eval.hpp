// Copyright (c) 2026, The clipforge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Zero-shot evaluation: prompt-ensembled class embeddings, classification,
// bidirectional retrieval, robustness gap and the single-frame video protocol.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "clipforge/data.hpp"
#include "clipforge/errors.hpp"
#include "clipforge/model.hpp"
#include "clipforge/tensor.hpp"

namespace clipforge {

inline const std::vector<std::string> kDefaultPromptTemplates = {"a photo of a {}."};

struct ClassEmbedding {
  std::string name;
  std::vector<std::string> templates;
  std::vector<float> vector;  // unit norm
};

/// Maps captions to an [n × d] embedding matrix (rows need not be normalized).
using TextEncoderFn = std::function<Tensor(const std::vector<std::string>&)>;

/// Per class: embed every filled template, normalize, average, renormalize.
std::vector<ClassEmbedding> build_class_embeddings(const std::vector<std::string>& class_names,
                                                   const std::vector<std::string>& templates,
                                                   const TextEncoderFn& encoder);

TextEncoderFn model_text_encoder(const ModelConfig& config, const ParamStore& params, std::size_t batch = 64);

/// Unmasked image embeddings [n × d] for u8 CHW images, computed in chunks without a graph.
Tensor embed_images(const std::vector<const std::vector<std::uint8_t>*>& images, const ModelConfig& config,
                    const ParamStore& params, std::size_t batch = 64);
Tensor embed_records(const Corpus& corpus, const ModelConfig& config, const ParamStore& params, std::size_t batch = 64);

struct Classification {
  std::vector<std::size_t> predictions;
  /// Percentages.
  double top1 = 0.0;
  double top5 = 0.0;
  /// min(5, number of classes).
  std::size_t top5_k = 0;
};

/// Argmax cosine similarity, ties to the lowest class index. `labels` may be empty,
/// in which case accuracies are left at zero.
Classification zero_shot_classify(const Tensor& image_embeddings, const std::vector<ClassEmbedding>& classes,
                                  std::span<const std::uint32_t> labels = {});

/// Ranked gallery indices for one score row: descending score, ties to the lower index.
std::vector<std::size_t> rank_desc(std::span<const double> scores);

/// R@k in percent over a [queries × gallery] score matrix (row-major).
/// Throws InputError naming the first query with an empty ground-truth set.
std::map<std::size_t, double> recall_at_k_scores(std::span<const double> scores, std::size_t queries,
                                                 std::size_t gallery,
                                                 const std::vector<std::vector<std::size_t>>& ground_truth,
                                                 const std::vector<std::size_t>& ks = {1, 5, 10});

/// Cosine-similarity R@k.
std::map<std::size_t, double> recall_at_k(const Tensor& queries, const Tensor& gallery,
                                          const std::vector<std::vector<std::size_t>>& ground_truth,
                                          const std::vector<std::size_t>& ks = {1, 5, 10});

struct RetrievalTable {
  /// Image queries against the caption gallery.
  std::map<std::size_t, double> text_retrieval;
  /// Caption queries against the image gallery.
  std::map<std::size_t, double> image_retrieval;
};

/// Both directions from one image→captions ground-truth map (many captions per image allowed).
RetrievalTable retrieval(const Tensor& image_embeddings, const Tensor& text_embeddings,
                         const std::vector<std::vector<std::size_t>>& image_to_texts,
                         const std::vector<std::size_t>& ks = {1, 5, 10});

/// Round half away from zero to one decimal.
double round1(double x);

struct RobustnessGap {
  /// mean(reference ∪ variants) and reference − avg, unrounded.
  double avg = 0.0;
  double delta = 0.0;
  /// Table form: avg to one decimal, and the gap taken from that rounded average.
  double avg_1dp = 0.0;
  double delta_1dp = 0.0;
};

RobustnessGap robustness_gap(double reference_top1, std::span<const double> variant_top1s);

/// Kinetics-style score. InputError when top5 < top1.
double mean_top1_top5(double top1, double top5);

/// Frame at floor(n/2). InputError on an empty sequence.
template <typename Frame>
const Frame& center_frame(const std::vector<Frame>& frames) {
  if (frames.empty()) throw InputError("center_frame: empty frame sequence");
  return frames[frames.size() / 2];
}

struct BenchmarkResult {
  std::string name;
  double top1 = 0.0;
  std::optional<double> top5;
  std::size_t samples = 0;
};

inline constexpr int kEvalReportVersion = 1;

struct EvalReport {
  std::vector<BenchmarkResult> benchmarks;
  std::string reference;
  /// Names entering the averaged accuracy (reference first).
  std::vector<std::string> robustness_set;
  RobustnessGap gap;
  std::optional<RetrievalTable> retrieval;
  /// Extra named scalars (e.g. the video score).
  std::map<std::string, double> extra;

  const BenchmarkResult* find(const std::string& name) const;
  nlohmann::json to_json() const;
  /// Flat (benchmark, metric, value) rows with a header line.
  std::string to_csv() const;
};

/// Distribution shifts applied to a reference corpus.
enum class Variant { Noise, LowContrast, Grayscale, Shift };
std::string to_string(Variant v);
Corpus make_variant(const Corpus& reference, Variant variant, std::uint64_t seed);

/// Clips of `frames` frames per record; only the center frame is the clean image,
/// the others are heavily corrupted.
std::vector<std::vector<std::vector<std::uint8_t>>> make_clips(const Corpus& reference, std::size_t frames,
                                                               std::uint64_t seed);

/// Reference + four shifted variants + center-frame video benchmark + class-level retrieval
/// on the reference corpus.
EvalReport evaluate_suite(const ModelConfig& config, const ParamStore& params, const Corpus& reference,
                          const std::vector<std::string>& class_names, const std::vector<std::string>& templates,
                          std::uint64_t seed = 1);

}  // namespace clipforge
