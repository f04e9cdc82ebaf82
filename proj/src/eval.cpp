// Copyright (c) 2026, The clipforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "clipforge/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "clipforge/encoder.hpp"
#include "clipforge/rng.hpp"
#include "clipforge/tokenizer.hpp"

namespace clipforge {

using nlohmann::json;

namespace {

void normalize(std::vector<double>& v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n > 0.0)
    for (double& x : v) x /= n;
}

std::vector<double> row_norms_inverse(const Tensor& m) {
  const std::size_t r = m.size(0), d = m.size(1);
  std::vector<double> inv(r, 0.0);
  const auto data = m.data();
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += static_cast<double>(data[i * d + k]) * data[i * d + k];
    inv[i] = s > 0.0 ? 1.0 / std::sqrt(s) : 0.0;
  }
  return inv;
}

// Cosine similarities between the rows of a [q×d] and b [g×d].
std::vector<double> cosine_matrix(const Tensor& a, const Tensor& b) {
  if (a.dim() != 2 || b.dim() != 2 || a.size(1) != b.size(1))
    throw DimensionError("cosine similarity of " + to_string(a.shape()) + " and " + to_string(b.shape()));
  const std::size_t q = a.size(0), g = b.size(0), d = a.size(1);
  const auto ia = row_norms_inverse(a), ib = row_norms_inverse(b);
  const auto da = a.data(), db = b.data();
  std::vector<double> s(q * g);
  for (std::size_t i = 0; i < q; ++i)
    for (std::size_t j = 0; j < g; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += static_cast<double>(da[i * d + k]) * db[j * d + k];
      s[i * g + j] = dot * ia[i] * ib[j];
    }
  return s;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw InputError("no embeddings to concatenate");
  const std::size_t d = parts.front().size(1);
  std::vector<float> out;
  std::size_t rows = 0;
  for (const Tensor& p : parts) {
    out.insert(out.end(), p.data().begin(), p.data().end());
    rows += p.size(0);
  }
  return Tensor::from({rows, d}, std::move(out));
}

double percent(std::size_t hits, std::size_t total) {
  return total ? 100.0 * static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

std::vector<ClassEmbedding> build_class_embeddings(const std::vector<std::string>& class_names,
                                                   const std::vector<std::string>& templates,
                                                   const TextEncoderFn& encoder) {
  if (class_names.empty()) throw InputError("build_class_embeddings: empty class list");
  if (templates.empty()) throw InputError("build_class_embeddings: at least one template is required");
  std::vector<std::string> captions;
  for (const auto& name : class_names)
    for (const auto& t : templates) captions.push_back(fill_template(t, name));
  const Tensor emb = encoder(captions);
  if (emb.dim() != 2 || emb.size(0) != captions.size())
    throw DimensionError("build_class_embeddings: encoder returned " + to_string(emb.shape()) + " for " +
                         std::to_string(captions.size()) + " captions");
  const std::size_t d = emb.size(1);
  const auto inv = row_norms_inverse(emb);
  std::vector<ClassEmbedding> out;
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    std::vector<double> acc(d, 0.0);
    for (std::size_t t = 0; t < templates.size(); ++t) {
      const std::size_t row = c * templates.size() + t;
      for (std::size_t k = 0; k < d; ++k) acc[k] += emb.data()[row * d + k] * inv[row];
    }
    for (double& x : acc) x /= static_cast<double>(templates.size());
    normalize(acc);
    out.push_back({class_names[c], templates, std::vector<float>(acc.begin(), acc.end())});
  }
  return out;
}

TextEncoderFn model_text_encoder(const ModelConfig& config, const ParamStore& params, std::size_t batch) {
  return [&config, &params, batch](const std::vector<std::string>& captions) {
    NoGradGuard guard;
    const TokenizerSpec spec{config.text.context_length};
    std::vector<Tensor> parts;
    for (std::size_t s = 0; s < captions.size(); s += batch) {
      const std::vector<std::string> chunk(captions.begin() + static_cast<std::ptrdiff_t>(s),
                                           captions.begin() + static_cast<std::ptrdiff_t>(std::min(captions.size(), s + batch)));
      parts.push_back(encode_text(tokenize_batch(chunk, spec), config, params).vector);
    }
    return concat_rows(parts);
  };
}

Tensor embed_images(const std::vector<const std::vector<std::uint8_t>*>& images, const ModelConfig& config,
                    const ParamStore& params, std::size_t batch) {
  NoGradGuard guard;
  const std::size_t c = config.image.channels, s = config.image.image_size, per = c * s * s;
  std::vector<Tensor> parts;
  for (std::size_t start = 0; start < images.size(); start += batch) {
    const std::size_t stop = std::min(images.size(), start + batch);
    std::vector<float> pixels;
    pixels.reserve((stop - start) * per);
    for (std::size_t i = start; i < stop; ++i) {
      if (images[i]->size() != per)
        throw DimensionError("embed_images: image " + std::to_string(i) + " has " + std::to_string(images[i]->size()) +
                             " bytes, tower expects " + std::to_string(per));
      const auto f = image_to_float(*images[i]);
      pixels.insert(pixels.end(), f.begin(), f.end());
    }
    parts.push_back(encode_image(Tensor::from({stop - start, c, s, s}, std::move(pixels)), config, params).vector);
  }
  return concat_rows(parts);
}

Tensor embed_records(const Corpus& corpus, const ModelConfig& config, const ParamStore& params, std::size_t batch) {
  std::vector<const std::vector<std::uint8_t>*> images;
  for (const Record& r : corpus.records) images.push_back(&r.image);
  return embed_images(images, config, params, batch);
}

std::vector<std::size_t> rank_desc(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

Classification zero_shot_classify(const Tensor& image_embeddings, const std::vector<ClassEmbedding>& classes,
                                  std::span<const std::uint32_t> labels) {
  if (classes.empty()) throw InputError("zero_shot_classify: no classes");
  if (image_embeddings.dim() != 2) throw DimensionError("zero_shot_classify: embeddings must be a matrix");
  const std::size_t d = image_embeddings.size(1), n = image_embeddings.size(0), C = classes.size();
  std::vector<float> table;
  for (const auto& c : classes) {
    if (c.vector.size() != d)
      throw DimensionError("zero_shot_classify: class '" + c.name + "' has dimension " + std::to_string(c.vector.size()) +
                           ", images have " + std::to_string(d));
    table.insert(table.end(), c.vector.begin(), c.vector.end());
  }
  if (!labels.empty() && labels.size() != n)
    throw DimensionError("zero_shot_classify: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                         " images");
  const auto scores = cosine_matrix(image_embeddings, Tensor::from({C, d}, std::move(table)));
  Classification out;
  out.top5_k = std::min<std::size_t>(5, C);
  std::size_t hit1 = 0, hit5 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto order = rank_desc(std::span<const double>(scores).subspan(i * C, C));
    out.predictions.push_back(order[0]);
    if (!labels.empty()) {
      if (labels[i] >= C) throw InputError("zero_shot_classify: label " + std::to_string(labels[i]) + " out of range");
      hit1 += order[0] == labels[i];
      hit5 += std::find(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(out.top5_k), labels[i]) !=
              order.begin() + static_cast<std::ptrdiff_t>(out.top5_k);
    }
  }
  if (!labels.empty()) {
    out.top1 = percent(hit1, n);
    out.top5 = percent(hit5, n);
  }
  return out;
}

std::map<std::size_t, double> recall_at_k_scores(std::span<const double> scores, std::size_t queries,
                                                 std::size_t gallery,
                                                 const std::vector<std::vector<std::size_t>>& ground_truth,
                                                 const std::vector<std::size_t>& ks) {
  if (scores.size() != queries * gallery)
    throw DimensionError("recall_at_k: " + std::to_string(scores.size()) + " scores for " + std::to_string(queries) +
                         "x" + std::to_string(gallery));
  if (ground_truth.size() != queries)
    throw DimensionError("recall_at_k: ground truth covers " + std::to_string(ground_truth.size()) + " of " +
                         std::to_string(queries) + " queries");
  for (std::size_t q = 0; q < queries; ++q) {
    if (ground_truth[q].empty()) throw InputError("recall_at_k: query " + std::to_string(q) + " has no ground truth");
    for (std::size_t g : ground_truth[q])
      if (g >= gallery) throw InputError("recall_at_k: query " + std::to_string(q) + " references gallery item " + std::to_string(g));
  }
  std::map<std::size_t, std::size_t> hits;
  for (std::size_t k : ks) hits[k] = 0;
  for (std::size_t q = 0; q < queries; ++q) {
    const auto order = rank_desc(scores.subspan(q * gallery, gallery));
    // Best rank among the ground-truth items.
    std::size_t best = gallery;
    for (std::size_t r = 0; r < gallery && best == gallery; ++r)
      if (std::find(ground_truth[q].begin(), ground_truth[q].end(), order[r]) != ground_truth[q].end()) best = r;
    for (auto& [k, h] : hits) h += best < k;
  }
  std::map<std::size_t, double> out;
  for (const auto& [k, h] : hits) out[k] = percent(h, queries);
  return out;
}

std::map<std::size_t, double> recall_at_k(const Tensor& queries, const Tensor& gallery,
                                          const std::vector<std::vector<std::size_t>>& ground_truth,
                                          const std::vector<std::size_t>& ks) {
  const auto s = cosine_matrix(queries, gallery);
  return recall_at_k_scores(s, queries.size(0), gallery.size(0), ground_truth, ks);
}

RetrievalTable retrieval(const Tensor& image_embeddings, const Tensor& text_embeddings,
                         const std::vector<std::vector<std::size_t>>& image_to_texts,
                         const std::vector<std::size_t>& ks) {
  const std::size_t ni = image_embeddings.size(0), nt = text_embeddings.size(0);
  if (image_to_texts.size() != ni)
    throw DimensionError("retrieval: ground truth covers " + std::to_string(image_to_texts.size()) + " of " +
                         std::to_string(ni) + " images");
  std::vector<std::vector<std::size_t>> text_to_images(nt);
  for (std::size_t i = 0; i < ni; ++i)
    for (std::size_t t : image_to_texts[i]) {
      if (t >= nt) throw InputError("retrieval: image " + std::to_string(i) + " references caption " + std::to_string(t));
      text_to_images[t].push_back(i);
    }
  RetrievalTable out;
  out.text_retrieval = recall_at_k(image_embeddings, text_embeddings, image_to_texts, ks);
  out.image_retrieval = recall_at_k(text_embeddings, image_embeddings, text_to_images, ks);
  return out;
}

double round1(double x) {
  // The nudge absorbs binary representation error at exact .x5 decimal ties.
  const double scaled = x * 10.0;
  return std::round(scaled + (scaled >= 0 ? 1e-9 : -1e-9)) / 10.0;
}

RobustnessGap robustness_gap(double reference_top1, std::span<const double> variant_top1s) {
  if (variant_top1s.empty()) throw InputError("robustness_gap: no variant accuracies");
  const auto check = [](double a) {
    if (!(a >= 0.0 && a <= 100.0)) throw RangeError("robustness_gap: accuracy " + std::to_string(a) + " outside [0, 100]");
  };
  check(reference_top1);
  double sum = reference_top1;
  for (double v : variant_top1s) {
    check(v);
    sum += v;
  }
  RobustnessGap g;
  g.avg = sum / static_cast<double>(variant_top1s.size() + 1);
  g.delta = reference_top1 - g.avg;
  g.avg_1dp = round1(g.avg);
  g.delta_1dp = round1(reference_top1 - g.avg_1dp);
  return g;
}

double mean_top1_top5(double top1, double top5) {
  if (top5 < top1) throw InputError("mean_top1_top5: top-5 " + std::to_string(top5) + " below top-1 " + std::to_string(top1));
  return 0.5 * (top1 + top5);
}

const BenchmarkResult* EvalReport::find(const std::string& name) const {
  for (const auto& b : benchmarks)
    if (b.name == name) return &b;
  return nullptr;
}

json EvalReport::to_json() const {
  json bench = json::array();
  for (const auto& b : benchmarks) {
    json e = {{"name", b.name}, {"top1", round1(b.top1)}, {"samples", b.samples}};
    if (b.top5) e["top5"] = round1(*b.top5);
    bench.push_back(e);
  }
  json j = {{"schema", "clipforge.eval_report"},
            {"version", kEvalReportVersion},
            {"reference", reference},
            {"benchmarks", bench},
            {"robustness",
             {{"set", robustness_set},
              {"averaged_top1", gap.avg_1dp},
              {"delta_gap", gap.delta_1dp},
              {"averaged_top1_exact", gap.avg},
              {"delta_gap_exact", gap.delta}}}};
  if (retrieval) {
    const auto table = [](const std::map<std::size_t, double>& m) {
      json t = json::object();
      for (const auto& [k, v] : m) t["R@" + std::to_string(k)] = round1(v);
      return t;
    };
    j["retrieval"] = {{"text_retrieval", table(retrieval->text_retrieval)},
                      {"image_retrieval", table(retrieval->image_retrieval)}};
  }
  json ex = json::object();
  for (const auto& [k, v] : extra) ex[k] = round1(v);
  j["extra"] = ex;
  return j;
}

std::string EvalReport::to_csv() const {
  std::ostringstream out;
  out << "benchmark,metric,value\n";
  for (const auto& b : benchmarks) {
    out << b.name << ",top1," << round1(b.top1) << '\n';
    if (b.top5) out << b.name << ",top5," << round1(*b.top5) << '\n';
  }
  out << "robustness,averaged_top1," << gap.avg_1dp << '\n';
  out << "robustness,delta_gap," << gap.delta_1dp << '\n';
  if (retrieval) {
    for (const auto& [k, v] : retrieval->text_retrieval) out << "text_retrieval,R@" << k << ',' << round1(v) << '\n';
    for (const auto& [k, v] : retrieval->image_retrieval) out << "image_retrieval,R@" << k << ',' << round1(v) << '\n';
  }
  for (const auto& [k, v] : extra) out << "extra," << k << ',' << round1(v) << '\n';
  return out.str();
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Noise: return "noise";
    case Variant::LowContrast: return "low_contrast";
    case Variant::Grayscale: return "grayscale";
    case Variant::Shift: return "shift";
  }
  return "unknown";
}

Corpus make_variant(const Corpus& reference, Variant variant, std::uint64_t seed) {
  Corpus out = reference;
  Rng rng(seed);
  const std::size_t c = reference.channels, s = reference.image_size, plane = s * s;
  for (Record& r : out.records) {
    const std::vector<std::uint8_t> src = r.image;
    switch (variant) {
      case Variant::Noise:
        for (auto& p : r.image) p = to_u8(p / 255.0 + 0.2 * rng.normal());
        break;
      case Variant::LowContrast:
        for (auto& p : r.image) p = to_u8(0.5 + 0.4 * (p / 255.0 - 0.5));
        break;
      case Variant::Grayscale:
        for (std::size_t i = 0; i < plane; ++i) {
          double m = 0.0;
          for (std::size_t ch = 0; ch < c; ++ch) m += src[ch * plane + i];
          for (std::size_t ch = 0; ch < c; ++ch) r.image[ch * plane + i] = to_u8(m / static_cast<double>(c) / 255.0);
        }
        break;
      case Variant::Shift: {
        const std::size_t off = std::max<std::size_t>(1, s / 8);
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t y = 0; y < s; ++y)
            for (std::size_t x = 0; x < s; ++x)
              r.image[ch * plane + ((y + off) % s) * s + (x + off) % s] = src[ch * plane + y * s + x];
        break;
      }
    }
  }
  return out;
}

std::vector<std::vector<std::vector<std::uint8_t>>> make_clips(const Corpus& reference, std::size_t frames,
                                                               std::uint64_t seed) {
  if (frames == 0) throw InputError("make_clips: clips need at least one frame");
  Rng rng(seed);
  std::vector<std::vector<std::vector<std::uint8_t>>> clips;
  for (const Record& r : reference.records) {
    std::vector<std::vector<std::uint8_t>> clip(frames);
    for (std::size_t f = 0; f < frames; ++f) {
      if (f == frames / 2) {
        clip[f] = r.image;
        continue;
      }
      clip[f].resize(r.image.size());
      for (auto& p : clip[f]) p = to_u8(rng.uniform());
    }
    clips.push_back(std::move(clip));
  }
  return clips;
}

EvalReport evaluate_suite(const ModelConfig& config, const ParamStore& params, const Corpus& reference,
                          const std::vector<std::string>& class_names, const std::vector<std::string>& templates,
                          std::uint64_t seed) {
  if (reference.records.empty()) throw InputError("evaluate_suite: empty reference corpus");
  const auto classes = build_class_embeddings(class_names, templates, model_text_encoder(config, params));
  const auto labels_of = [](const Corpus& c) {
    std::vector<std::uint32_t> l;
    for (const Record& r : c.records) l.push_back(r.class_id);
    return l;
  };
  const auto labels = labels_of(reference);
  EvalReport report;
  report.reference = "synthetic";

  const Tensor ref_emb = embed_records(reference, config, params);
  const auto ref_cls = zero_shot_classify(ref_emb, classes, labels);
  report.benchmarks.push_back({"synthetic", ref_cls.top1, ref_cls.top5, labels.size()});
  report.robustness_set.push_back("synthetic");
  std::vector<double> variant_top1;
  std::uint64_t s = seed;
  for (Variant v : {Variant::Noise, Variant::LowContrast, Variant::Grayscale, Variant::Shift}) {
    const Corpus var = make_variant(reference, v, ++s);
    const auto cls = zero_shot_classify(embed_records(var, config, params), classes, labels);
    const std::string name = "synthetic-" + to_string(v);
    report.benchmarks.push_back({name, cls.top1, cls.top5, labels.size()});
    report.robustness_set.push_back(name);
    variant_top1.push_back(cls.top1);
  }
  report.gap = robustness_gap(ref_cls.top1, variant_top1);

  const auto clips = make_clips(reference, 5, ++s);
  std::vector<const std::vector<std::uint8_t>*> centers;
  for (const auto& clip : clips) centers.push_back(&center_frame(clip));
  const auto video = zero_shot_classify(embed_images(centers, config, params), classes, labels);
  report.benchmarks.push_back({"synthetic-video", video.top1, video.top5, labels.size()});
  report.extra["synthetic-video.mean_top1_top5"] = mean_top1_top5(video.top1, video.top5);

  std::vector<std::string> captions;
  for (const Record& r : reference.records) captions.push_back(r.caption);
  const Tensor txt = model_text_encoder(config, params)(captions);
  std::vector<std::vector<std::size_t>> gt(reference.records.size());
  for (std::size_t i = 0; i < reference.records.size(); ++i)
    for (std::size_t j = 0; j < reference.records.size(); ++j)
      if (reference.records[j].class_id == reference.records[i].class_id) gt[i].push_back(j);
  report.retrieval = retrieval(ref_emb, txt, gt);
  return report;
}

}  // namespace clipforge
