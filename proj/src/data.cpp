// Copyright (c) 2026, The clipforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "clipforge/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>

#include "clipforge/errors.hpp"

namespace clipforge {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::vector<std::string> kDefaultClassNames = {
    "apple",  "bridge", "castle", "dolphin", "engine", "forest", "guitar",  "harbor",
    "island", "jacket", "kettle", "lantern", "meadow", "needle", "orchard", "pyramid"};

const std::vector<std::string> kDefaultTemplates = {"a photo of a {}.", "a picture of the {}.",
                                                    "an image showing a {}."};

constexpr char kShardMagic[4] = {'C', 'F', 'S', 'H'};

struct PatternParams {
  double cos_theta, sin_theta, frequency, phase;
};

PatternParams pattern_params(std::size_t c, std::size_t num_classes) {
  (void)num_classes;
  const double golden = 0.6180339887498949;
  const double theta = std::numbers::pi * std::fmod(static_cast<double>(c) * golden, 1.0);
  return {std::cos(theta), std::sin(theta), 1.5 + static_cast<double>(c % 4),
          2.0 * std::numbers::pi * std::fmod(static_cast<double>(c) * 0.377, 1.0)};
}

double palette(std::size_t c, std::size_t num_classes, std::size_t ch) {
  const double t = static_cast<double>(c) / static_cast<double>(num_classes) + static_cast<double>(ch) / 3.0;
  return 0.55 + 0.45 * std::cos(2.0 * std::numbers::pi * t);
}

void render(std::vector<float>& out, std::size_t c, std::size_t num_classes, std::size_t size, std::size_t channels,
            double contrast, double phase_jitter) {
  const PatternParams p = pattern_params(c, num_classes);
  out.resize(channels * size * size);
  for (std::size_t ch = 0; ch < channels; ++ch) {
    const double w = palette(c, num_classes, ch);
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(size);
        const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(size);
        const double arg = 2.0 * std::numbers::pi * p.frequency * (u * p.cos_theta + v * p.sin_theta) + p.phase + phase_jitter;
        out[(ch * size + y) * size + x] = static_cast<float>(0.5 + 0.35 * contrast * w * std::sin(arg));
      }
  }
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class ByteCursor {
 public:
  explicit ByteCursor(std::span<const std::uint8_t> bytes, std::size_t offset = 0) : bytes_(bytes), offset_(offset) {}

  std::uint64_t read_le(std::size_t width, const char* what) {
    require(width, what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes_[offset_ + i]) << (8 * i);
    offset_ += width;
    return v;
  }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    require(n, what);
    auto s = bytes_.subspan(offset_, n);
    offset_ += n;
    return s;
  }

  std::size_t offset() const { return offset_; }

 private:
  void require(std::size_t n, const char* what) {
    if (bytes_.size() - offset_ < n)
      throw CorruptionError(std::string("shard truncated while reading ") + what, offset_);
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t offset_;
};

std::uint64_t decode_header(ByteCursor& cur) {
  const auto magic = cur.take(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), kShardMagic))
    throw FormatError("not a shard file: bad magic");
  const auto version = static_cast<std::uint32_t>(cur.read_le(4, "version"));
  if (version != kShardVersion) throw FormatError("unsupported shard version " + std::to_string(version));
  return cur.read_le(8, "record count");
}

Record decode_record(ByteCursor& cur) {
  Record r;
  r.class_id = static_cast<std::uint32_t>(cur.read_le(4, "class id"));
  const auto img_len = static_cast<std::size_t>(cur.read_le(4, "image length"));
  const auto img = cur.take(img_len, "image bytes");
  r.image.assign(img.begin(), img.end());
  const auto cap_len = static_cast<std::size_t>(cur.read_le(4, "caption length"));
  const auto cap = cur.take(cap_len, "caption bytes");
  r.caption.assign(cap.begin(), cap.end());
  return r;
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  for (const auto& l : lines) out << l << '\n';
}

}  // namespace

void CorpusSpec::validate() const {
  if (num_classes < 2) throw ConfigError("num_classes", "need at least 2 classes");
  if (samples_per_class == 0) throw ConfigError("samples_per_class", "must be positive");
  if (image_size == 0) throw ConfigError("image_size", "must be positive");
  if (channels == 0) throw ConfigError("channels", "must be positive");
  if (noise < 0.0) throw ConfigError("noise", "must be non-negative");
  if (!class_names.empty() && class_names.size() != num_classes)
    throw ConfigError("class_names", "expected " + std::to_string(num_classes) + " names");
  for (const auto& t : caption_templates)
    if (t.find("{}") == std::string::npos) throw ConfigError("caption_templates", "template '" + t + "' lacks {}");
}

std::vector<std::string> CorpusSpec::resolved_class_names() const {
  if (!class_names.empty()) return class_names;
  std::vector<std::string> names;
  for (std::size_t c = 0; c < num_classes; ++c)
    names.push_back(c < kDefaultClassNames.size() ? kDefaultClassNames[c] : "object " + std::to_string(c));
  return names;
}

std::vector<std::string> CorpusSpec::resolved_templates() const {
  return caption_templates.empty() ? kDefaultTemplates : caption_templates;
}

CorpusSpec CorpusSpec::from_json(const json& j) {
  CorpusSpec s;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "num_classes") s.num_classes = value.get<std::size_t>();
      else if (key == "samples_per_class") s.samples_per_class = value.get<std::size_t>();
      else if (key == "image_size") s.image_size = value.get<std::size_t>();
      else if (key == "channels") s.channels = value.get<std::size_t>();
      else if (key == "class_names") s.class_names = value.get<std::vector<std::string>>();
      else if (key == "caption_templates") s.caption_templates = value.get<std::vector<std::string>>();
      else if (key == "seed") s.seed = value.get<std::uint64_t>();
      else if (key == "noise") s.noise = value.get<double>();
      else if (key == "records_per_shard") s.records_per_shard = value.get<std::size_t>();
      else throw ConfigError(key, "unknown corpus spec field");
    } catch (const json::exception& e) {
      throw ConfigError(key, e.what());
    }
  }
  s.validate();
  return s;
}

json CorpusSpec::to_json() const {
  return {{"num_classes", num_classes},       {"samples_per_class", samples_per_class},
          {"image_size", image_size},         {"channels", channels},
          {"class_names", resolved_class_names()}, {"caption_templates", resolved_templates()},
          {"seed", seed},                     {"noise", noise},
          {"records_per_shard", records_per_shard}};
}

std::vector<float> class_pattern(std::size_t class_id, std::size_t num_classes, std::size_t image_size,
                                 std::size_t channels) {
  std::vector<float> out;
  render(out, class_id, num_classes, image_size, channels, 1.0, 0.0);
  return out;
}

std::string fill_template(const std::string& tmpl, const std::string& class_name) {
  std::string out = tmpl;
  const auto pos = out.find("{}");
  if (pos != std::string::npos) out.replace(pos, 2, class_name);
  return out;
}

Corpus generate_corpus(const CorpusSpec& spec) {
  spec.validate();
  Corpus corpus;
  corpus.image_size = spec.image_size;
  corpus.channels = spec.channels;
  corpus.seed = spec.seed;
  corpus.class_names = spec.resolved_class_names();
  corpus.caption_templates = spec.resolved_templates();
  Rng rng(spec.seed);
  std::vector<float> pixels;
  for (std::size_t s = 0; s < spec.samples_per_class; ++s)
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
      const double contrast = rng.uniform(0.85, 1.0);
      const double jitter = rng.uniform(-0.25, 0.25);
      render(pixels, c, spec.num_classes, spec.image_size, spec.channels, contrast, jitter);
      Record r;
      r.class_id = static_cast<std::uint32_t>(c);
      r.image.resize(pixels.size());
      for (std::size_t i = 0; i < pixels.size(); ++i) {
        const double v = pixels[i] + spec.noise * rng.normal();
        r.image[i] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
      }
      const auto& tmpl = corpus.caption_templates[(s + c) % corpus.caption_templates.size()];
      r.caption = fill_template(tmpl, corpus.class_names[c]);
      corpus.records.push_back(std::move(r));
    }
  return corpus;
}

std::size_t recover_class(std::span<const std::uint8_t> image, std::size_t num_classes, std::size_t image_size,
                          std::size_t channels) {
  const std::size_t n = channels * image_size * image_size;
  if (image.size() != n) throw DimensionError("recover_class: image has " + std::to_string(image.size()) + " bytes, expected " + std::to_string(n));
  std::vector<double> x(n);
  double mx = 0.0;
  for (std::size_t i = 0; i < n; ++i) mx += x[i] = image[i] / 255.0;
  mx /= static_cast<double>(n);
  std::size_t best = 0;
  double best_score = -2.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const auto t = class_pattern(c, num_classes, image_size, channels);
    const double mt = std::accumulate(t.begin(), t.end(), 0.0) / static_cast<double>(n);
    double dot = 0.0, nx = 0.0, nt = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      dot += (x[i] - mx) * (t[i] - mt);
      nx += (x[i] - mx) * (x[i] - mx);
      nt += (t[i] - mt) * (t[i] - mt);
    }
    const double score = dot / std::sqrt(nx * nt + 1e-30);
    if (score > best_score) {
      best_score = score;
      best = c;
    }
  }
  return best;
}

// -- shards ------------------------------------------------------------------

std::vector<std::uint8_t> encode_shard(std::span<const Record> records) {
  std::vector<std::uint8_t> out(kShardMagic, kShardMagic + 4);
  put_u32(out, kShardVersion);
  put_u64(out, records.size());
  for (const Record& r : records) {
    put_u32(out, r.class_id);
    put_u32(out, static_cast<std::uint32_t>(r.image.size()));
    out.insert(out.end(), r.image.begin(), r.image.end());
    put_u32(out, static_cast<std::uint32_t>(r.caption.size()));
    out.insert(out.end(), r.caption.begin(), r.caption.end());
  }
  return out;
}

std::vector<Record> decode_shard(std::span<const std::uint8_t> bytes) {
  ByteCursor cur(bytes);
  const std::uint64_t count = decode_header(cur);
  std::vector<Record> records;
  for (std::uint64_t i = 0; i < count; ++i) records.push_back(decode_record(cur));
  if (cur.offset() != bytes.size())
    throw CorruptionError("trailing bytes after " + std::to_string(count) + " records", cur.offset());
  return records;
}

void write_shard(std::span<const Record> records, const fs::path& path) {
  const auto bytes = encode_shard(records);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<Record> read_shard(const fs::path& path) { return decode_shard(read_file(path)); }

ShardReader::ShardReader(const fs::path& path) : bytes_(read_file(path)) {
  ByteCursor cur(bytes_);
  count_ = decode_header(cur);
  offset_ = cur.offset();
}

bool ShardReader::next(Record& out) {
  if (read_ == count_) return false;
  ByteCursor cur(bytes_, offset_);
  out = decode_record(cur);
  offset_ = cur.offset();
  ++read_;
  return true;
}

fs::path write_corpus(const Corpus& corpus, const fs::path& dir, std::size_t records_per_shard) {
  fs::create_directories(dir);
  const std::size_t per = records_per_shard ? records_per_shard : std::max<std::size_t>(corpus.records.size(), 1);
  json shards = json::array();
  std::size_t index = 0;
  for (std::size_t start = 0; start < corpus.records.size() || index == 0; start += per, ++index) {
    const std::size_t stop = std::min(corpus.records.size(), start + per);
    char name[32];
    std::snprintf(name, sizeof name, "shard-%05zu.cfsh", index);
    write_shard(std::span<const Record>(corpus.records).subspan(start, stop - start), dir / name);
    shards.push_back(name);
    if (stop == corpus.records.size()) break;
  }
  const json manifest = {{"format", "clipforge.corpus_manifest"},
                         {"version", 1},
                         {"seed", corpus.seed},
                         {"image_size", corpus.image_size},
                         {"channels", corpus.channels},
                         {"class_names", corpus.class_names},
                         {"caption_templates", corpus.caption_templates},
                         {"shards", shards}};
  const fs::path path = dir / "manifest.json";
  std::ofstream(path) << manifest.dump(2) << '\n';
  write_lines(dir / "classes.txt", corpus.class_names);
  write_lines(dir / "templates.txt", {"a photo of a {}."});
  return path;
}

Corpus load_corpus(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw FormatError("cannot open manifest '" + manifest_path.string() + "'");
  json m;
  try {
    m = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("manifest '" + manifest_path.string() + "': " + e.what());
  }
  if (m.value("format", "") != "clipforge.corpus_manifest")
    throw FormatError("manifest '" + manifest_path.string() + "' has an unexpected format tag");
  Corpus c;
  c.seed = m.at("seed").get<std::uint64_t>();
  c.image_size = m.at("image_size").get<std::size_t>();
  c.channels = m.at("channels").get<std::size_t>();
  c.class_names = m.at("class_names").get<std::vector<std::string>>();
  c.caption_templates = m.at("caption_templates").get<std::vector<std::string>>();
  const fs::path base = manifest_path.parent_path();
  for (const auto& s : m.at("shards")) {
    auto recs = read_shard(base / s.get<std::string>());
    std::move(recs.begin(), recs.end(), std::back_inserter(c.records));
  }
  return c;
}

// -- augmentation and batching -----------------------------------------------

std::vector<float> image_to_float(std::span<const std::uint8_t> image) {
  std::vector<float> out(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) out[i] = static_cast<float>(image[i] / 127.5 - 1.0);
  return out;
}

std::vector<float> random_resized_crop(std::span<const float> image, std::size_t channels, std::size_t size, double lo,
                                       double hi, Rng& rng) {
  if (!(lo > 0.0 && lo <= hi && hi <= 1.0)) throw ConfigError("crop_scale", "need 0 < lo <= hi <= 1");
  if (image.size() != channels * size * size)
    throw DimensionError("random_resized_crop: image of " + std::to_string(image.size()) + " values for " +
                         std::to_string(channels) + "x" + std::to_string(size) + "x" + std::to_string(size));
  const double area = rng.uniform(lo, hi);
  const double s = static_cast<double>(size);
  const double side = std::sqrt(area) * s;
  const double y0 = rng.uniform() * (s - side);
  const double x0 = rng.uniform() * (s - side);
  const double step = side / s;
  std::vector<float> out(image.size());
  const auto sample = [&](const float* plane, double sy, double sx) {
    sy = std::clamp(sy, 0.0, s - 1.0);
    sx = std::clamp(sx, 0.0, s - 1.0);
    const auto iy = std::min(static_cast<std::size_t>(sy), size - 1), ix = std::min(static_cast<std::size_t>(sx), size - 1);
    const std::size_t iy1 = std::min(iy + 1, size - 1), ix1 = std::min(ix + 1, size - 1);
    const double fy = sy - static_cast<double>(iy), fx = sx - static_cast<double>(ix);
    const double top = (1 - fx) * plane[iy * size + ix] + fx * plane[iy * size + ix1];
    const double bot = (1 - fx) * plane[iy1 * size + ix] + fx * plane[iy1 * size + ix1];
    return static_cast<float>((1 - fy) * top + fy * bot);
  };
  for (std::size_t ch = 0; ch < channels; ++ch) {
    const float* plane = image.data() + ch * size * size;
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x)
        out[(ch * size + y) * size + x] = sample(plane, y0 + (static_cast<double>(y) + 0.5) * step - 0.5,
                                                 x0 + (static_cast<double>(x) + 0.5) * step - 0.5);
  }
  return out;
}

Batch make_batch(const Corpus& corpus, std::span<const std::size_t> indices, bool training, const AugmentSpec& augment,
                 Rng* rng, const TokenizerSpec& tokenizer) {
  if (indices.empty()) throw InputError("make_batch: empty batch");
  if (training && augment.enabled && !rng) throw ContractError("make_batch: training augmentation needs a generator");
  const std::size_t c = corpus.channels, s = corpus.image_size, per = c * s * s;
  std::vector<float> pixels(indices.size() * per);
  std::vector<std::string> captions;
  Batch b;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Record& r = corpus.records.at(indices[i]);
    std::vector<float> img = image_to_float(r.image);
    if (training && augment.enabled) img = random_resized_crop(img, c, s, augment.crop_lo, augment.crop_hi, *rng);
    std::copy(img.begin(), img.end(), pixels.begin() + static_cast<std::ptrdiff_t>(i * per));
    captions.push_back(r.caption);
    b.labels.push_back(r.class_id);
  }
  b.images = Tensor::from({indices.size(), c, s, s}, std::move(pixels));
  b.tokens = tokenize_batch(captions, tokenizer);
  b.record_indices.assign(indices.begin(), indices.end());
  return b;
}

Batcher::Batcher(std::size_t num_records, std::size_t batch_size, std::uint64_t seed)
    : num_records_(num_records), batch_size_(batch_size), seed_(seed) {
  if (num_records == 0) throw InputError("Batcher: corpus is empty");
  if (batch_size == 0) throw ConfigError("batch_size", "must be positive");
  order_ = permutation(0);
}

std::vector<std::size_t> Batcher::permutation(std::uint64_t epoch) const {
  std::vector<std::size_t> p(num_records_);
  std::iota(p.begin(), p.end(), 0);
  Rng rng(seed_ * 0x9E3779B97F4A7C15ULL + epoch + 1);
  for (std::size_t i = p.size(); i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
  return p;
}

void Batcher::set_position(std::uint64_t epoch, std::size_t cursor) {
  if (cursor > num_records_) throw RangeError("Batcher: cursor beyond epoch length");
  epoch_ = epoch;
  cursor_ = cursor;
  order_ = permutation(epoch_);
}

std::vector<std::size_t> Batcher::next() {
  std::vector<std::size_t> out;
  out.reserve(batch_size_);
  while (out.size() < batch_size_) {
    if (cursor_ == num_records_) {
      ++epoch_;
      cursor_ = 0;
      order_ = permutation(epoch_);
    }
    out.push_back(order_[cursor_++]);
  }
  return out;
}

}  // namespace clipforge
