// Decoder-only transformer with GLU feed-forward blocks, instrumented for
// neuron-level work: every forward records the pre-gate activations f and
// gate activations g per layer, scalar-output gradients with respect to f
// (or g) are available by backpropagation, and forwards can run under
// call-scoped activation overrides that never touch the weights.
//
// Block structure mirrors a Llama-style stack at small scale: pre-norm
// residual blocks with RMS normalization, multi-head causal attention with
// learned positional embeddings, and FFN(x) = (x Wu ⊙ SiLU(x Wg)) Wd.
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "qrn/tensor.hpp"
#include "qrn/util.hpp"

namespace qrn {

constexpr double kRmsEps = 1e-5;

struct ModelConfig {
  int num_layers = 0;
  int d_model = 0;
  int ffn_dim = 0;
  int vocab_size = 0;
  int num_heads = 0;
  int max_seq_len = 0;
  std::uint64_t rng_seed = 0;

  void validate() const {
    require(num_layers >= 1, "num_layers must be >= 1");
    require(d_model >= 1, "d_model must be >= 1");
    require(ffn_dim >= 1, "ffn_dim must be >= 1");
    require(num_heads >= 1, "num_heads must be >= 1");
    require(max_seq_len >= 1, "max_seq_len must be >= 1");
    require(d_model % num_heads == 0, "d_model must be divisible by num_heads");
    require(vocab_size >= 5, "vocab_size must cover the four option letters");
  }

  int head_dim() const { return d_model / num_heads; }
};

// Address of one FFN intermediate neuron: (layer, index into ffn_dim).
struct NeuronId {
  int layer = 0;
  int index = 0;

  friend bool operator==(const NeuronId&, const NeuronId&) = default;
  friend auto operator<=>(const NeuronId&, const NeuronId&) = default;
};

struct LayerParams {
  Matrix wq, wk, wv, wo;  // d_model x d_model
  Matrix w_up, w_gate;    // d_model x ffn_dim
  Matrix w_down;          // ffn_dim x d_model
  Vec attn_norm_gain, ffn_norm_gain;  // d_model
};

struct GluTransformer {
  ModelConfig config;
  Matrix tok_embed;  // vocab x d_model
  Matrix pos_embed;  // max_seq_len x d_model
  std::vector<LayerParams> layers;
  Vec final_norm_gain;  // d_model
  Matrix unembed;       // d_model x vocab

  static GluTransformer zeros(const ModelConfig& cfg) {
    cfg.validate();
    GluTransformer m;
    m.config = cfg;
    m.tok_embed = Matrix(cfg.vocab_size, cfg.d_model);
    m.pos_embed = Matrix(cfg.max_seq_len, cfg.d_model);
    m.layers.resize(static_cast<std::size_t>(cfg.num_layers));
    for (auto& l : m.layers) {
      l.wq = Matrix(cfg.d_model, cfg.d_model);
      l.wk = Matrix(cfg.d_model, cfg.d_model);
      l.wv = Matrix(cfg.d_model, cfg.d_model);
      l.wo = Matrix(cfg.d_model, cfg.d_model);
      l.w_up = Matrix(cfg.d_model, cfg.ffn_dim);
      l.w_gate = Matrix(cfg.d_model, cfg.ffn_dim);
      l.w_down = Matrix(cfg.ffn_dim, cfg.d_model);
      l.attn_norm_gain.assign(static_cast<std::size_t>(cfg.d_model), 1.0);
      l.ffn_norm_gain.assign(static_cast<std::size_t>(cfg.d_model), 1.0);
    }
    m.final_norm_gain.assign(static_cast<std::size_t>(cfg.d_model), 1.0);
    m.unembed = Matrix(cfg.d_model, cfg.vocab_size);
    return m;
  }

  static GluTransformer random_init(const ModelConfig& cfg) {
    GluTransformer m = zeros(cfg);
    Rng rng(cfg.rng_seed);
    const double embed_std = 0.5;
    const double proj_std = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    const double down_std = 1.0 / std::sqrt(static_cast<double>(cfg.ffn_dim));
    auto fill = [&](Matrix& mat, double std_dev) {
      for (double& v : mat.data) v = rng.next_normal() * std_dev;
    };
    fill(m.tok_embed, embed_std);
    fill(m.pos_embed, embed_std * 0.1);
    for (auto& l : m.layers) {
      fill(l.wq, proj_std);
      fill(l.wk, proj_std);
      fill(l.wv, proj_std);
      fill(l.wo, proj_std);
      fill(l.w_up, proj_std);
      fill(l.w_gate, proj_std);
      fill(l.w_down, down_std);
    }
    fill(m.unembed, proj_std);
    return m;
  }

  void check_neuron(const NeuronId& n) const {
    require(n.layer >= 0 && n.layer < config.num_layers,
            "neuron layer out of range: ", n.layer);
    require(n.index >= 0 && n.index < config.ffn_dim,
            "neuron index out of range: ", n.index);
  }

  void validate() const {
    config.validate();
    auto chk = [&](const Matrix& m, int r, int c, const char* name) {
      require(m.rows == r && m.cols == c, "parameter shape mismatch: ", name);
      require(m.all_finite(), "non-finite parameter values: ", name);
    };
    chk(tok_embed, config.vocab_size, config.d_model, "tok_embed");
    chk(pos_embed, config.max_seq_len, config.d_model, "pos_embed");
    require(static_cast<int>(layers.size()) == config.num_layers,
            "layer count mismatch");
    for (const auto& l : layers) {
      chk(l.wq, config.d_model, config.d_model, "wq");
      chk(l.wk, config.d_model, config.d_model, "wk");
      chk(l.wv, config.d_model, config.d_model, "wv");
      chk(l.wo, config.d_model, config.d_model, "wo");
      chk(l.w_up, config.d_model, config.ffn_dim, "w_up");
      chk(l.w_gate, config.d_model, config.ffn_dim, "w_gate");
      chk(l.w_down, config.ffn_dim, config.d_model, "w_down");
      require(static_cast<int>(l.attn_norm_gain.size()) == config.d_model &&
                  static_cast<int>(l.ffn_norm_gain.size()) == config.d_model,
              "norm gain size mismatch");
    }
    require(static_cast<int>(final_norm_gain.size()) == config.d_model,
            "final norm gain size mismatch");
    chk(unembed, config.d_model, config.vocab_size, "unembed");
  }
};

// Which FFN activation a gradient or override targets: the pre-gate linear
// term f = x Wu, or the gate g = SiLU(x Wg).
enum class AttrTarget { pre_gate_f, gate_g };

// Activation overrides resolved to concrete values, applied at the
// prediction position only. Overrides are scoped to a single forward call.
struct OverrideMap {
  // per layer, sorted by neuron index
  std::vector<std::vector<std::pair<int, double>>> per_layer;
  AttrTarget target = AttrTarget::pre_gate_f;

  bool empty() const {
    for (const auto& l : per_layer)
      if (!l.empty()) return false;
    return true;
  }
};

// A set of neurons plus an intervention mode. boost doubles the recorded
// baseline (f <- 2 f̄), suppress zeroes it, set_value assigns a constant.
struct InterventionSpec {
  enum class Mode { boost, suppress, set_value };
  Mode mode = Mode::suppress;
  std::vector<NeuronId> neurons;
  double value = 0.0;
};

// Full per-prompt activation record. Heavier than the public ForwardTrace;
// used for backprop and for the suffix-scoring cache.
struct Activations {
  struct Layer {
    Matrix x;         // seq x d   stream entering the layer
    Matrix xa_norm;   // seq x d   rmsnorm(x) * attn gain
    Matrix q, k, v;   // seq x d   heads concatenated
    Matrix att;       // (heads*seq) x seq   causal softmax weights
    Matrix attn_mix;  // seq x d   per-head mixes, pre output projection
    Matrix attn_out;  // seq x d
    Matrix h;         // seq x d   x + attn_out
    Matrix h_norm;    // seq x d   rmsnorm(h) * ffn gain
    Matrix f;         // seq x ffn pre-gate activations (post override)
    Matrix gate_pre;  // seq x ffn h_norm * w_gate
    Matrix g;         // seq x ffn SiLU(gate_pre) (post override)
    Matrix ffn_out;   // seq x d
  };
  std::vector<int> tokens;
  int pred_pos = 0;
  std::vector<Layer> layers;
  Matrix x_final;       // seq x d  stream entering the final norm
  Matrix final_normed;  // seq x d
  Matrix logits;        // seq x vocab (only pred row filled when
                        // logits_all_positions was false)
  bool logits_all = true;
};

// The spec-level trace: logits everywhere plus per-layer f and g.
struct ForwardTrace {
  Matrix logits;          // seq x vocab
  std::vector<Matrix> f;  // per layer, seq x ffn
  std::vector<Matrix> g;  // per layer, seq x ffn
  int pred_pos = 0;

  double f_at(const NeuronId& n) const {
    return f[static_cast<std::size_t>(n.layer)].at(pred_pos, n.index);
  }
  double g_at(const NeuronId& n) const {
    return g[static_cast<std::size_t>(n.layer)].at(pred_pos, n.index);
  }
};

namespace detail {

inline void check_tokens(const GluTransformer& model, const std::vector<int>& tokens) {
  require(!tokens.empty(), "empty token sequence");
  require(static_cast<int>(tokens.size()) <= model.config.max_seq_len,
          "sequence length ", tokens.size(), " exceeds max_seq_len ",
          model.config.max_seq_len);
  for (int t : tokens)
    require(t >= 0 && t < model.config.vocab_size, "token id out of range: ", t);
}

// Causal multi-head attention for one layer over all positions.
inline void attention_forward(const GluTransformer& model, Activations::Layer& L,
                              int seq) {
  const int d = model.config.d_model;
  const int nh = model.config.num_heads;
  const int hd = model.config.head_dim();
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
  L.att = Matrix(nh * seq, seq);
  L.attn_mix = Matrix(seq, d);
  for (int h = 0; h < nh; ++h) {
    const int off = h * hd;
    for (int p = 0; p < seq; ++p) {
      auto arow = L.att.row(h * seq + p);
      const double* qp = L.q.data.data() + static_cast<std::size_t>(p) * d + off;
      double mx = -1e300;
      for (int j = 0; j <= p; ++j) {
        const double* kj = L.k.data.data() + static_cast<std::size_t>(j) * d + off;
        double s = 0.0;
        for (int e = 0; e < hd; ++e) s += qp[e] * kj[e];
        s *= inv_sqrt_hd;
        arow[static_cast<std::size_t>(j)] = s;
        mx = std::max(mx, s);
      }
      double sum = 0.0;
      for (int j = 0; j <= p; ++j) {
        double& a = arow[static_cast<std::size_t>(j)];
        a = std::exp(a - mx);
        sum += a;
      }
      double* mixp = L.attn_mix.data.data() + static_cast<std::size_t>(p) * d + off;
      for (int j = 0; j <= p; ++j) {
        const double a = (arow[static_cast<std::size_t>(j)] /= sum);
        const double* vj = L.v.data.data() + static_cast<std::size_t>(j) * d + off;
        for (int e = 0; e < hd; ++e) mixp[e] += a * vj[e];
      }
    }
  }
}

}  // namespace detail

// Forward pass recording all intermediates. Deterministic for fixed weights
// and input. Overrides, when present, replace f (or g) values at the
// prediction position before the Hadamard product.
inline Activations forward_acts(const GluTransformer& model,
                                const std::vector<int>& tokens,
                                const OverrideMap* overrides = nullptr,
                                bool logits_all_positions = true) {
  detail::check_tokens(model, tokens);
  if (overrides != nullptr) {
    require(static_cast<int>(overrides->per_layer.size()) <= model.config.num_layers,
            "override layer count exceeds model layers");
    for (std::size_t l = 0; l < overrides->per_layer.size(); ++l)
      for (const auto& [idx, _] : overrides->per_layer[l])
        model.check_neuron(NeuronId{static_cast<int>(l), idx});
  }

  const int seq = static_cast<int>(tokens.size());
  const int d = model.config.d_model;
  const int ffn = model.config.ffn_dim;

  Activations acts;
  acts.tokens = tokens;
  acts.pred_pos = seq - 1;
  acts.logits_all = logits_all_positions;
  acts.layers.resize(static_cast<std::size_t>(model.config.num_layers));

  Matrix x(seq, d);
  for (int p = 0; p < seq; ++p) {
    auto xr = x.row(p);
    const auto er = model.tok_embed.row(tokens[static_cast<std::size_t>(p)]);
    const auto pr = model.pos_embed.row(p);
    for (int e = 0; e < d; ++e) xr[static_cast<std::size_t>(e)] = er[static_cast<std::size_t>(e)] + pr[static_cast<std::size_t>(e)];
  }

  for (int li = 0; li < model.config.num_layers; ++li) {
    auto& L = acts.layers[static_cast<std::size_t>(li)];
    const auto& P = model.layers[static_cast<std::size_t>(li)];
    L.x = x;

    L.xa_norm = Matrix(seq, d);
    for (int p = 0; p < seq; ++p)
      rmsnorm(L.x.row(p), P.attn_norm_gain, kRmsEps, L.xa_norm.row(p));

    matmul(L.xa_norm, P.wq, L.q);
    matmul(L.xa_norm, P.wk, L.k);
    matmul(L.xa_norm, P.wv, L.v);
    detail::attention_forward(model, L, seq);
    matmul(L.attn_mix, P.wo, L.attn_out);

    L.h = Matrix(seq, d);
    for (std::size_t i = 0; i < L.h.data.size(); ++i)
      L.h.data[i] = L.x.data[i] + L.attn_out.data[i];

    L.h_norm = Matrix(seq, d);
    for (int p = 0; p < seq; ++p)
      rmsnorm(L.h.row(p), P.ffn_norm_gain, kRmsEps, L.h_norm.row(p));

    matmul(L.h_norm, P.w_up, L.f);
    matmul(L.h_norm, P.w_gate, L.gate_pre);
    L.g = Matrix(seq, ffn);
    for (std::size_t i = 0; i < L.g.data.size(); ++i)
      L.g.data[i] = silu(L.gate_pre.data[i]);

    if (overrides != nullptr &&
        static_cast<std::size_t>(li) < overrides->per_layer.size()) {
      auto frow = L.f.row(acts.pred_pos);
      auto grow = L.g.row(acts.pred_pos);
      for (const auto& [idx, val] : overrides->per_layer[static_cast<std::size_t>(li)]) {
        if (overrides->target == AttrTarget::pre_gate_f)
          frow[static_cast<std::size_t>(idx)] = val;
        else
          grow[static_cast<std::size_t>(idx)] = val;
      }
    }

    Matrix gated(seq, ffn);
    for (std::size_t i = 0; i < gated.data.size(); ++i)
      gated.data[i] = L.f.data[i] * L.g.data[i];
    matmul(gated, P.w_down, L.ffn_out);

    for (std::size_t i = 0; i < x.data.size(); ++i)
      x.data[i] = L.h.data[i] + L.ffn_out.data[i];
  }

  acts.x_final = x;
  acts.final_normed = Matrix(seq, d);
  for (int p = 0; p < seq; ++p)
    rmsnorm(x.row(p), model.final_norm_gain, kRmsEps, acts.final_normed.row(p));

  acts.logits = Matrix(seq, model.config.vocab_size);
  if (logits_all_positions) {
    matmul(acts.final_normed, model.unembed, acts.logits);
  } else {
    vec_mat(acts.final_normed.row(acts.pred_pos), model.unembed,
            acts.logits.row(acts.pred_pos));
  }
  return acts;
}

inline ForwardTrace trace_from_acts(const Activations& acts) {
  ForwardTrace t;
  t.logits = acts.logits;
  t.pred_pos = acts.pred_pos;
  t.f.reserve(acts.layers.size());
  t.g.reserve(acts.layers.size());
  for (const auto& L : acts.layers) {
    t.f.push_back(L.f);
    t.g.push_back(L.g);
  }
  return t;
}

inline ForwardTrace forward(const GluTransformer& model, const std::vector<int>& tokens) {
  return trace_from_acts(forward_acts(model, tokens));
}

// Resolves an intervention against a recorded clean trace. boost needs the
// baseline; suppress and set_value do not.
inline OverrideMap resolve_intervention(const GluTransformer& model,
                                        const InterventionSpec& spec,
                                        const ForwardTrace* baseline,
                                        AttrTarget target = AttrTarget::pre_gate_f) {
  OverrideMap map;
  map.target = target;
  map.per_layer.resize(static_cast<std::size_t>(model.config.num_layers));
  for (const auto& n : spec.neurons) {
    model.check_neuron(n);
    double val = 0.0;
    switch (spec.mode) {
      case InterventionSpec::Mode::suppress:
        val = 0.0;
        break;
      case InterventionSpec::Mode::boost:
        require(baseline != nullptr,
                "boost intervention requires a recorded baseline trace");
        val = 2.0 * (target == AttrTarget::pre_gate_f ? baseline->f_at(n)
                                                      : baseline->g_at(n));
        break;
      case InterventionSpec::Mode::set_value:
        val = spec.value;
        break;
    }
    map.per_layer[static_cast<std::size_t>(n.layer)].emplace_back(n.index, val);
  }
  for (auto& l : map.per_layer)
    std::sort(l.begin(), l.end());
  return map;
}

inline ForwardTrace forward_with_override(const GluTransformer& model,
                                          const std::vector<int>& tokens,
                                          const InterventionSpec& spec,
                                          const ForwardTrace* baseline = nullptr) {
  const OverrideMap map = resolve_intervention(model, spec, baseline);
  return trace_from_acts(forward_acts(model, tokens, &map));
}

inline double prob_from_logits(std::span<const double> logits, int token) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  return std::exp(logits[static_cast<std::size_t>(token)] - mx) / sum;
}

// Softmax probability of answer_token at the final prompt position.
inline double answer_prob(const GluTransformer& model, const std::vector<int>& tokens,
                          int answer_token) {
  require(answer_token >= 0 && answer_token < model.config.vocab_size,
          "answer token out of range: ", answer_token);
  const Activations acts = forward_acts(model, tokens, nullptr, false);
  return prob_from_logits(acts.logits.row(acts.pred_pos), answer_token);
}

// Rescores a prompt with the f (or g) vector of one layer replaced at the
// prediction position, recomputing only the final position's path through
// the layers above. Earlier positions cannot depend on the override under
// causal attention, so their cached activations stay valid.
//
// This is the hot path for integrated gradients: one cache build per prompt,
// then each Riemann step costs one final-position pass.
class ScoringCache {
 public:
  ScoringCache(const GluTransformer& model, std::vector<int> tokens)
      : model_(&model), acts_(forward_acts(model, tokens, nullptr, false)) {}

  ScoringCache(const GluTransformer& model, Activations acts)
      : model_(&model), acts_(std::move(acts)) {}

  const Activations& clean_acts() const { return acts_; }

  int pred_pos() const { return acts_.pred_pos; }

  std::span<const double> clean_f(int layer) const {
    return acts_.layers[static_cast<std::size_t>(layer)].f.row(acts_.pred_pos);
  }
  std::span<const double> clean_g(int layer) const {
    return acts_.layers[static_cast<std::size_t>(layer)].g.row(acts_.pred_pos);
  }

  double clean_prob(int answer_token) const {
    return prob_from_logits(acts_.logits.row(acts_.pred_pos), answer_token);
  }

  // P(answer) with the target activation vector of `layer` replaced by
  // `value` at the prediction position. When grad_out is non-null it
  // receives dP/d(value), length ffn_dim.
  double score(int layer, std::span<const double> value, int answer_token,
               Vec* grad_out, AttrTarget target = AttrTarget::pre_gate_f) const {
    const auto& cfg = model_->config;
    require(layer >= 0 && layer < cfg.num_layers, "layer out of range: ", layer);
    require(static_cast<int>(value.size()) == cfg.ffn_dim,
            "override vector length must equal ffn_dim");
    require(answer_token >= 0 && answer_token < cfg.vocab_size,
            "answer token out of range");

    const int d = cfg.d_model;
    const int ffn = cfg.ffn_dim;
    const int pos = acts_.pred_pos;
    const auto& L0 = acts_.layers[static_cast<std::size_t>(layer)];

    // ---- forward from `layer` along the final position ----
    Vec gated(static_cast<std::size_t>(ffn));
    const auto f0 = L0.f.row(pos);
    const auto g0 = L0.g.row(pos);
    for (int i = 0; i < ffn; ++i) {
      const double fi = (target == AttrTarget::pre_gate_f) ? value[static_cast<std::size_t>(i)] : f0[static_cast<std::size_t>(i)];
      const double gi = (target == AttrTarget::pre_gate_f) ? g0[static_cast<std::size_t>(i)] : value[static_cast<std::size_t>(i)];
      gated[static_cast<std::size_t>(i)] = fi * gi;
    }
    Vec x(static_cast<std::size_t>(d));
    vec_mat(gated, model_->layers[static_cast<std::size_t>(layer)].w_down, x);
    {
      const auto h0 = L0.h.row(pos);
      for (int e = 0; e < d; ++e) x[static_cast<std::size_t>(e)] += h0[static_cast<std::size_t>(e)];
    }

    struct SufLayer {
      Vec x_in, xa, q, kk, vv, att, mix, attn_out, h, hn, f, gate_pre, g, gated;
    };
    std::vector<SufLayer> suf(static_cast<std::size_t>(cfg.num_layers - layer - 1));

    const int nh = cfg.num_heads;
    const int hd = cfg.head_dim();
    const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));

    for (int li = layer + 1; li < cfg.num_layers; ++li) {
      auto& S = suf[static_cast<std::size_t>(li - layer - 1)];
      const auto& P = model_->layers[static_cast<std::size_t>(li)];
      const auto& LC = acts_.layers[static_cast<std::size_t>(li)];
      S.x_in = x;
      S.xa.resize(static_cast<std::size_t>(d));
      rmsnorm(S.x_in, P.attn_norm_gain, kRmsEps, S.xa);
      S.q.resize(static_cast<std::size_t>(d));
      S.kk.resize(static_cast<std::size_t>(d));
      S.vv.resize(static_cast<std::size_t>(d));
      vec_mat(S.xa, P.wq, S.q);
      vec_mat(S.xa, P.wk, S.kk);
      vec_mat(S.xa, P.wv, S.vv);
      // attention: keys/values of earlier positions come from the clean
      // pass, the final position's come fresh
      S.att.assign(static_cast<std::size_t>(nh) * (pos + 1), 0.0);
      S.mix.assign(static_cast<std::size_t>(d), 0.0);
      for (int h = 0; h < nh; ++h) {
        const int off = h * hd;
        double* arow = S.att.data() + static_cast<std::size_t>(h) * (pos + 1);
        double mx = -1e300;
        for (int j = 0; j <= pos; ++j) {
          const double* kj = (j == pos)
                                 ? S.kk.data() + off
                                 : LC.k.data.data() + static_cast<std::size_t>(j) * d + off;
          double s = 0.0;
          for (int e = 0; e < hd; ++e) s += S.q[static_cast<std::size_t>(off + e)] * kj[e];
          s *= inv_sqrt_hd;
          arow[j] = s;
          mx = std::max(mx, s);
        }
        double sum = 0.0;
        for (int j = 0; j <= pos; ++j) {
          arow[j] = std::exp(arow[j] - mx);
          sum += arow[j];
        }
        for (int j = 0; j <= pos; ++j) {
          arow[j] /= sum;
          const double* vj = (j == pos)
                                 ? S.vv.data() + off
                                 : LC.v.data.data() + static_cast<std::size_t>(j) * d + off;
          for (int e = 0; e < hd; ++e) S.mix[static_cast<std::size_t>(off + e)] += arow[j] * vj[e];
        }
      }
      S.attn_out.resize(static_cast<std::size_t>(d));
      vec_mat(S.mix, P.wo, S.attn_out);
      S.h.resize(static_cast<std::size_t>(d));
      for (int e = 0; e < d; ++e) S.h[static_cast<std::size_t>(e)] = S.x_in[static_cast<std::size_t>(e)] + S.attn_out[static_cast<std::size_t>(e)];
      S.hn.resize(static_cast<std::size_t>(d));
      rmsnorm(S.h, P.ffn_norm_gain, kRmsEps, S.hn);
      S.f.resize(static_cast<std::size_t>(ffn));
      S.gate_pre.resize(static_cast<std::size_t>(ffn));
      vec_mat(S.hn, P.w_up, S.f);
      vec_mat(S.hn, P.w_gate, S.gate_pre);
      S.g.resize(static_cast<std::size_t>(ffn));
      S.gated.resize(static_cast<std::size_t>(ffn));
      for (int i = 0; i < ffn; ++i) {
        S.g[static_cast<std::size_t>(i)] = silu(S.gate_pre[static_cast<std::size_t>(i)]);
        S.gated[static_cast<std::size_t>(i)] = S.f[static_cast<std::size_t>(i)] * S.g[static_cast<std::size_t>(i)];
      }
      Vec ffn_out(static_cast<std::size_t>(d));
      vec_mat(S.gated, P.w_down, ffn_out);
      for (int e = 0; e < d; ++e) x[static_cast<std::size_t>(e)] = S.h[static_cast<std::size_t>(e)] + ffn_out[static_cast<std::size_t>(e)];
    }

    Vec fn(static_cast<std::size_t>(d));
    rmsnorm(x, model_->final_norm_gain, kRmsEps, fn);
    Vec logits(static_cast<std::size_t>(cfg.vocab_size));
    vec_mat(fn, model_->unembed, logits);

    Vec probs = logits;
    softmax_inplace(probs);
    const double p_ans = probs[static_cast<std::size_t>(answer_token)];

    if (grad_out == nullptr) return p_ans;

    // ---- backward along the same path ----
    Vec dlogits(static_cast<std::size_t>(cfg.vocab_size));
    for (int j = 0; j < cfg.vocab_size; ++j) {
      const double delta = (j == answer_token) ? 1.0 : 0.0;
      dlogits[static_cast<std::size_t>(j)] = p_ans * (delta - probs[static_cast<std::size_t>(j)]);
    }
    Vec dfn(static_cast<std::size_t>(d));
    vec_mat_t(dlogits, model_->unembed, dfn);
    Vec dx(static_cast<std::size_t>(d), 0.0);
    rmsnorm_backward(x, model_->final_norm_gain, kRmsEps, dfn, dx);

    Vec dh(static_cast<std::size_t>(d)), dhn(static_cast<std::size_t>(d)), dxa(static_cast<std::size_t>(d));
    Vec df(static_cast<std::size_t>(ffn)), dg(static_cast<std::size_t>(ffn)), dgated(static_cast<std::size_t>(ffn));
    Vec dmix(static_cast<std::size_t>(d)), dq(static_cast<std::size_t>(d)), dkk(static_cast<std::size_t>(d)), dvv(static_cast<std::size_t>(d));

    for (int li = cfg.num_layers - 1; li > layer; --li) {
      const auto& S = suf[static_cast<std::size_t>(li - layer - 1)];
      const auto& P = model_->layers[static_cast<std::size_t>(li)];
      const auto& LC = acts_.layers[static_cast<std::size_t>(li)];

      // x = h + gated * w_down
      vec_mat_t(dx, P.w_down, dgated);
      for (int i = 0; i < ffn; ++i) {
        df[static_cast<std::size_t>(i)] = dgated[static_cast<std::size_t>(i)] * S.g[static_cast<std::size_t>(i)];
        dg[static_cast<std::size_t>(i)] = dgated[static_cast<std::size_t>(i)] * S.f[static_cast<std::size_t>(i)] *
                                          silu_grad(S.gate_pre[static_cast<std::size_t>(i)]);
      }
      vec_mat_t(df, P.w_up, dhn);
      Vec tmp(static_cast<std::size_t>(d));
      vec_mat_t(dg, P.w_gate, tmp);
      for (int e = 0; e < d; ++e) dhn[static_cast<std::size_t>(e)] += tmp[static_cast<std::size_t>(e)];

      std::copy(dx.begin(), dx.end(), dh.begin());  // residual into h
      rmsnorm_backward(S.h, P.ffn_norm_gain, kRmsEps, dhn, dh);

      // h = x_in + attn_out
      vec_mat_t(dh, P.wo, dmix);
      std::fill(dq.begin(), dq.end(), 0.0);
      std::fill(dkk.begin(), dkk.end(), 0.0);
      std::fill(dvv.begin(), dvv.end(), 0.0);
      for (int h = 0; h < nh; ++h) {
        const int off = h * hd;
        const double* arow = S.att.data() + static_cast<std::size_t>(h) * (pos + 1);
        // datt_j = dmix . v_j; only v at pos is variable
        double dot_sum = 0.0;
        Vec datt(static_cast<std::size_t>(pos + 1));
        for (int j = 0; j <= pos; ++j) {
          const double* vj = (j == pos)
                                 ? S.vv.data() + off
                                 : LC.v.data.data() + static_cast<std::size_t>(j) * d + off;
          double a = 0.0;
          for (int e = 0; e < hd; ++e) a += dmix[static_cast<std::size_t>(off + e)] * vj[e];
          datt[static_cast<std::size_t>(j)] = a;
          dot_sum += a * arow[j];
        }
        for (int e = 0; e < hd; ++e)
          dvv[static_cast<std::size_t>(off + e)] += arow[pos] * dmix[static_cast<std::size_t>(off + e)];
        for (int j = 0; j <= pos; ++j) {
          const double dscore = arow[j] * (datt[static_cast<std::size_t>(j)] - dot_sum) * inv_sqrt_hd;
          const double* kj = (j == pos)
                                 ? S.kk.data() + off
                                 : LC.k.data.data() + static_cast<std::size_t>(j) * d + off;
          for (int e = 0; e < hd; ++e) dq[static_cast<std::size_t>(off + e)] += dscore * kj[e];
          if (j == pos)
            for (int e = 0; e < hd; ++e)
              dkk[static_cast<std::size_t>(off + e)] += dscore * S.q[static_cast<std::size_t>(off + e)];
        }
      }
      std::fill(dxa.begin(), dxa.end(), 0.0);
      vec_mat_t(dq, P.wq, tmp);
      for (int e = 0; e < d; ++e) dxa[static_cast<std::size_t>(e)] += tmp[static_cast<std::size_t>(e)];
      vec_mat_t(dkk, P.wk, tmp);
      for (int e = 0; e < d; ++e) dxa[static_cast<std::size_t>(e)] += tmp[static_cast<std::size_t>(e)];
      vec_mat_t(dvv, P.wv, tmp);
      for (int e = 0; e < d; ++e) dxa[static_cast<std::size_t>(e)] += tmp[static_cast<std::size_t>(e)];

      std::copy(dh.begin(), dh.end(), dx.begin());  // residual into x_in
      rmsnorm_backward(S.x_in, P.attn_norm_gain, kRmsEps, dxa, dx);
    }

    // at `layer`: x = h0 + ((f or g override) ⊙ partner) * w_down
    vec_mat_t(dx, model_->layers[static_cast<std::size_t>(layer)].w_down, dgated);
    grad_out->assign(static_cast<std::size_t>(ffn), 0.0);
    for (int i = 0; i < ffn; ++i) {
      const double partner = (target == AttrTarget::pre_gate_f) ? g0[static_cast<std::size_t>(i)] : f0[static_cast<std::size_t>(i)];
      (*grad_out)[static_cast<std::size_t>(i)] = dgated[static_cast<std::size_t>(i)] * partner;
    }
    return p_ans;
  }

 private:
  const GluTransformer* model_;
  Activations acts_;
};

// Exact gradient of answer_prob with respect to the f activations of
// `layer` at the prediction position.
inline Vec grad_answer_prob(const GluTransformer& model, const std::vector<int>& tokens,
                            int answer_token, int layer,
                            AttrTarget target = AttrTarget::pre_gate_f) {
  require(layer >= 0 && layer < model.config.num_layers, "layer out of range: ", layer);
  ScoringCache cache(model, tokens);
  Vec grad;
  const auto base = (target == AttrTarget::pre_gate_f) ? cache.clean_f(layer)
                                                       : cache.clean_g(layer);
  cache.score(layer, base, answer_token, &grad, target);
  return grad;
}

}  // namespace qrn
