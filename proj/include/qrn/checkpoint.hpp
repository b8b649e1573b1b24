// Binary model checkpoint: one container holding the config, a small
// string-valued meta section, the tokenizer vocabulary, and all parameter
// tensors in row-major order, behind a magic tag and format version.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "qrn/model.hpp"
#include "qrn/tokenizer.hpp"
#include "qrn/util.hpp"

namespace qrn {

constexpr char kCheckpointMagic[8] = {'Q', 'R', 'N', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  GluTransformer model;
  Tokenizer tokenizer;
  std::map<std::string, std::string> meta;
};

namespace detail {

struct ByteWriter {
  std::string out;
  void raw(const void* p, std::size_t n) {
    out.append(static_cast<const char*>(p), n);
  }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void i32(std::int32_t v) { raw(&v, sizeof v); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void mat(const Matrix& m) {
    u32(static_cast<std::uint32_t>(m.rows));
    u32(static_cast<std::uint32_t>(m.cols));
    raw(m.data.data(), m.data.size() * sizeof(double));
  }
  void vec(const Vec& v) {
    u32(1);
    u32(static_cast<std::uint32_t>(v.size()));
    raw(v.data(), v.size() * sizeof(double));
  }
};

struct ByteReader {
  const std::string& buf;
  std::size_t at = 0;
  explicit ByteReader(const std::string& b) : buf(b) {}
  void raw(void* p, std::size_t n) {
    require(at + n <= buf.size(), "checkpoint truncated");
    std::memcpy(p, buf.data() + at, n);
    at += n;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, sizeof v);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, sizeof v);
    return v;
  }
  std::int32_t i32() {
    std::int32_t v;
    raw(&v, sizeof v);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  Matrix mat() {
    Matrix m;
    m.rows = static_cast<int>(u32());
    m.cols = static_cast<int>(u32());
    require(m.rows >= 0 && m.cols >= 0 && m.rows < (1 << 24) && m.cols < (1 << 24),
            "checkpoint tensor shape implausible");
    m.data.resize(static_cast<std::size_t>(m.rows) * m.cols);
    raw(m.data.data(), m.data.size() * sizeof(double));
    return m;
  }
  Vec vec() {
    const Matrix m = mat();
    require(m.rows == 1, "expected a vector tensor");
    return m.data;
  }
};

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  ckpt.model.validate();
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(kCheckpointVersion);
  const auto& cfg = ckpt.model.config;
  w.i32(cfg.num_layers);
  w.i32(cfg.d_model);
  w.i32(cfg.ffn_dim);
  w.i32(cfg.vocab_size);
  w.i32(cfg.num_heads);
  w.i32(cfg.max_seq_len);
  w.u64(cfg.rng_seed);
  w.u32(static_cast<std::uint32_t>(ckpt.meta.size()));
  for (const auto& [k, v] : ckpt.meta) {
    w.str(k);
    w.str(v);
  }
  w.u32(static_cast<std::uint32_t>(ckpt.tokenizer.size()));
  for (const auto& word : ckpt.tokenizer.vocab()) w.str(word);
  w.mat(ckpt.model.tok_embed);
  w.mat(ckpt.model.pos_embed);
  for (const auto& l : ckpt.model.layers) {
    w.mat(l.wq);
    w.mat(l.wk);
    w.mat(l.wv);
    w.mat(l.wo);
    w.mat(l.w_up);
    w.mat(l.w_gate);
    w.mat(l.w_down);
    w.vec(l.attn_norm_gain);
    w.vec(l.ffn_norm_gain);
  }
  w.vec(ckpt.model.final_norm_gain);
  w.mat(ckpt.model.unembed);
  write_file(path, w.out);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  const std::string buf = read_file(path);
  detail::ByteReader r(buf);
  char magic[8];
  r.raw(magic, sizeof magic);
  require(std::memcmp(magic, kCheckpointMagic, sizeof magic) == 0,
          "not a model checkpoint: ", path);
  const std::uint32_t version = r.u32();
  require(version == kCheckpointVersion, "unsupported checkpoint version ",
          version, " in ", path);
  Checkpoint ckpt;
  auto& cfg = ckpt.model.config;
  cfg.num_layers = r.i32();
  cfg.d_model = r.i32();
  cfg.ffn_dim = r.i32();
  cfg.vocab_size = r.i32();
  cfg.num_heads = r.i32();
  cfg.max_seq_len = r.i32();
  cfg.rng_seed = r.u64();
  cfg.validate();
  const std::uint32_t nmeta = r.u32();
  for (std::uint32_t i = 0; i < nmeta; ++i) {
    std::string k = r.str();
    ckpt.meta[k] = r.str();
  }
  const std::uint32_t nvocab = r.u32();
  require(static_cast<int>(nvocab) == cfg.vocab_size,
          "checkpoint vocabulary size disagrees with config");
  std::vector<std::string> vocab;
  vocab.reserve(nvocab);
  for (std::uint32_t i = 0; i < nvocab; ++i) vocab.push_back(r.str());
  ckpt.tokenizer = Tokenizer::from_vocab(std::move(vocab));
  ckpt.model.tok_embed = r.mat();
  ckpt.model.pos_embed = r.mat();
  ckpt.model.layers.resize(static_cast<std::size_t>(cfg.num_layers));
  for (auto& l : ckpt.model.layers) {
    l.wq = r.mat();
    l.wk = r.mat();
    l.wv = r.mat();
    l.wo = r.mat();
    l.w_up = r.mat();
    l.w_gate = r.mat();
    l.w_down = r.mat();
    l.attn_norm_gain = r.vec();
    l.ffn_norm_gain = r.vec();
  }
  ckpt.model.final_norm_gain = r.vec();
  ckpt.model.unembed = r.mat();
  require(r.at == buf.size(), "trailing bytes in checkpoint: ", path);
  ckpt.model.validate();
  return ckpt;
}

}  // namespace qrn
