// Copyright (c) 2026, The clipforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "clipforge/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <iterator>

#include "clipforge/errors.hpp"

namespace clipforge {

namespace {

constexpr char kMagic[4] = {'C', 'F', 'C', 'K'};

class Writer {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void i64(std::int64_t v) { le(static_cast<std::uint64_t>(v), 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void floats(std::span<const float> v) {
    for (float f : v) u32(std::bit_cast<std::uint32_t>(f));
  }

  std::vector<std::uint8_t> out;

 private:
  void le(std::uint64_t v, int width) {
    for (int i = 0; i < width; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}

  std::uint64_t le(std::size_t width, const char* what) {
    need(width, what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += width;
    return v;
  }
  std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(le(4, what)); }
  std::uint64_t u64(const char* what) { return le(8, what); }
  std::string str(const char* what) {
    const std::size_t n = u32(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::vector<float> floats(std::uint64_t n, const char* what) {
    if (n > (bytes_.size() - pos_) / 4) need(bytes_.size() - pos_ + 1, what);
    std::vector<float> v(n);
    for (auto& f : v) f = std::bit_cast<float>(u32(what));
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw CorruptionError(std::string("checkpoint truncated while reading ") + what, pos_);
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const NamedArray* Checkpoint::find(const std::string& name) const {
  auto it = std::find_if(tensors.begin(), tensors.end(), [&](const NamedArray& a) { return a.name == name; });
  return it == tensors.end() ? nullptr : &*it;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.raw(kMagic, 4);
  w.u32(kCheckpointVersion);
  const std::string meta = ckpt.metadata.dump();
  w.u64(meta.size());
  w.raw(meta.data(), meta.size());
  w.u64(ckpt.tensors.size());
  for (const NamedArray& a : ckpt.tensors) {
    if (numel(a.shape) != a.values.size())
      throw ShapeError("checkpoint tensor '" + a.name + "' has " + std::to_string(a.values.size()) +
                       " values for shape " + to_string(a.shape));
    w.str(a.name);
    w.u32(static_cast<std::uint32_t>(a.shape.size()));
    for (std::size_t d : a.shape) w.u64(d);
  }
  for (const NamedArray& a : ckpt.tensors) w.floats(a.values);
  w.u64(ckpt.optimizer.size());
  for (const auto& [name, st] : ckpt.optimizer) {
    if (st.m.size() != st.v.size()) throw ShapeError("optimizer state for '" + name + "' has mismatched moments");
    w.str(name);
    w.i64(st.step);
    w.u64(st.m.size());
    w.floats(st.m);
    w.floats(st.v);
  }
  return std::move(w.out);
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.take(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), kMagic)) throw FormatError("not a checkpoint file: bad magic");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  const std::uint64_t meta_len = r.u64("metadata length");
  const std::size_t meta_at = r.pos();
  const auto meta = r.take(meta_len, "metadata");
  try {
    ck.metadata = nlohmann::json::parse(meta.begin(), meta.end());
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(std::string("checkpoint metadata is not valid JSON: ") + e.what(), meta_at);
  }
  const std::uint64_t count = r.u64("tensor count");
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = r.str("tensor name");
    const std::uint32_t rank = r.u32("tensor rank");
    for (std::uint32_t d = 0; d < rank; ++d) a.shape.push_back(r.u64("tensor dims"));
    ck.tensors.push_back(std::move(a));
  }
  for (NamedArray& a : ck.tensors) a.values = r.floats(numel(a.shape), "tensor payload");
  const std::uint64_t moments = r.u64("optimizer entry count");
  for (std::uint64_t i = 0; i < moments; ++i) {
    const std::string name = r.str("optimizer name");
    MomentState st;
    st.step = static_cast<std::int64_t>(r.u64("optimizer step"));
    const std::uint64_t n = r.u64("optimizer size");
    st.m = r.floats(n, "first moment");
    st.v = r.floats(n, "second moment");
    ck.optimizer.emplace(name, std::move(st));
  }
  if (r.remaining() != 0) throw CorruptionError("trailing bytes after checkpoint payload", r.pos());
  return ck;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write checkpoint '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint '" + path.string() + "'");
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes);
}

std::vector<NamedArray> snapshot_params(const ParamStore& params) {
  std::vector<NamedArray> out;
  for (const auto& [name, t] : params) {
    const auto d = t.data();
    out.push_back({name, t.shape(), std::vector<float>(d.begin(), d.end())});
  }
  return out;
}

}  // namespace clipforge
