// Copyright (c) 2026, The PromptMix Authors
// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint layout (all integers u64 and all reals f64, little-endian):
//   magic "PMXCKPT\0", u32 version
//   string config            (u64 length + bytes, TrainConfig::serialize())
//   encoder spec             seed, V, d_emb, d, input_dim
//   u64 G, then per group:   string name, u64 init index, u64 n, n strings
//   u64 P, then per param:   string name, u64 rows, u64 cols, rows*cols f64
//   u64 P, then per buffer:  u64 rows, u64 cols, rows*cols f64   (momentum)
//   u64 step, f64 kl_initial, f64 kl_final
//   u64 H, then per row:     u64 step, u64 epoch, f64 lr, cls, router, text, total
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "promptmix/error.hpp"
#include "promptmix/trainer.hpp"

namespace promptmix {

inline constexpr char kCheckpointMagic[8] = {'P', 'M', 'X', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    out_.append(s);
  }
  void raw(const char* p, std::size_t n) { out_.append(p, n); }
  void matrix(const Matrix& m) {
    u64(m.rows());
    u64(m.cols());
    for (double v : m.values()) f64(v);
  }
  const std::string& bytes() const noexcept { return out_; }

 private:
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::string& data) : data_(data) {}

  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(uint(4)); }
  std::uint64_t u64() { return uint(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  Matrix matrix() {
    const std::uint64_t r = u64(), c = u64();
    if (r != 0 && c > (data_.size() - pos_) / 8 / r) throw ParseError("checkpoint matrix larger than file");
    Matrix m(r, c);
    for (double& v : m.values()) v = f64();
    return m;
  }
  void expect(const char* bytes, std::size_t n) {
    need(n);
    if (std::memcmp(data_.data() + pos_, bytes, n) != 0) throw ParseError("not a checkpoint file (bad magic)");
    pos_ += n;
  }
  bool done() const noexcept { return pos_ == data_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > data_.size() - pos_) throw ParseError("checkpoint truncated");
  }
  const std::string& data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.str(ck.config.serialize());
  w.u64(ck.encoder.seed);
  w.u64(ck.encoder.vocab_size);
  w.u64(ck.encoder.embed_dim);
  w.u64(ck.encoder.feature_dim);
  w.u64(ck.encoder.input_dim);
  w.u64(ck.groups.size());
  for (const TemplateGroup& g : ck.groups) {
    w.str(g.name);
    w.u64(g.init_template_index);
    w.u64(g.templates.size());
    for (const std::string& t : g.templates) w.str(t);
  }
  w.u64(ck.parameters.size());
  for (const Parameter& p : ck.parameters) {
    w.str(p.name);
    w.matrix(p.value);
  }
  w.u64(ck.momentum.size());
  for (const Matrix& m : ck.momentum) w.matrix(m);
  w.u64(ck.step);
  w.f64(ck.kl_initial);
  w.f64(ck.kl_final);
  w.u64(ck.history.size());
  for (const MetricRow& r : ck.history) {
    w.u64(r.step);
    w.u64(r.epoch);
    for (double v : {r.lr, r.cls, r.router, r.text, r.total}) w.f64(v);
  }
  return w.bytes();
}

inline Checkpoint parse_checkpoint(const std::string& bytes) {
  detail::ByteReader r(bytes);
  r.expect(kCheckpointMagic, sizeof kCheckpointMagic);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw UnsupportedVersionError("checkpoint version " + std::to_string(version) + " (expected " +
                                  std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ck;
  ck.config = TrainConfig::parse(r.str());
  ck.encoder.seed = r.u64();
  ck.encoder.vocab_size = r.u64();
  ck.encoder.embed_dim = r.u64();
  ck.encoder.feature_dim = r.u64();
  ck.encoder.input_dim = r.u64();
  const std::uint64_t groups = r.u64();
  for (std::uint64_t g = 0; g < groups; ++g) {
    TemplateGroup tg;
    tg.group_id = g;
    tg.name = r.str();
    tg.init_template_index = r.u64();
    const std::uint64_t n = r.u64();
    for (std::uint64_t i = 0; i < n; ++i) tg.templates.push_back(r.str());
    if (tg.init_template_index >= tg.templates.size()) throw ParseError("checkpoint group has bad init index");
    ck.groups.push_back(std::move(tg));
  }
  const std::uint64_t np = r.u64();
  for (std::uint64_t i = 0; i < np; ++i) {
    std::string name = r.str();
    ck.parameters.emplace_back(std::move(name), r.matrix());
  }
  const std::uint64_t nm = r.u64();
  for (std::uint64_t i = 0; i < nm; ++i) ck.momentum.push_back(r.matrix());
  ck.step = r.u64();
  ck.kl_initial = r.f64();
  ck.kl_final = r.f64();
  const std::uint64_t nh = r.u64();
  for (std::uint64_t i = 0; i < nh; ++i) {
    MetricRow m;
    m.step = r.u64();
    m.epoch = r.u64();
    m.lr = r.f64();
    m.cls = r.f64();
    m.router = r.f64();
    m.text = r.f64();
    m.total = r.f64();
    ck.history.push_back(m);
  }
  if (!r.done()) throw ParseError("trailing bytes after checkpoint");
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path);
  const std::string bytes = serialize_checkpoint(ck);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace promptmix
