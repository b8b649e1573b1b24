// Training for the toy memorization models: full backpropagation through
// the transformer and plain fixed-rate SGD over a deterministic batch order.
//
// The loss is cross-entropy on the answer-letter token at the final prompt
// position of each rendered instance.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "qrn/corpus.hpp"
#include "qrn/model.hpp"
#include "qrn/util.hpp"

namespace qrn {

struct TrainConfig {
  int epochs = 200;
  double learning_rate = 0.5;
  int batch_size = 16;
  std::uint64_t seed = 0;
  double target_accuracy = 0.98;

  void validate() const {
    require(epochs >= 1, "epochs must be >= 1");
    require(learning_rate > 0.0, "learning_rate must be positive");
    require(batch_size >= 1, "batch_size must be >= 1");
    require(target_accuracy > 0.0 && target_accuracy <= 1.0,
            "target_accuracy must be in (0, 1]");
  }
};

struct TrainExample {
  std::vector<int> tokens;
  int answer_token = 0;
};

struct EpochStats {
  double loss = 0.0;
  double accuracy = 0.0;
};

struct TrainLog {
  std::vector<EpochStats> epochs;
  bool reached_target = false;
};

// Parameter gradients share the model's container layout. Unlike a fresh
// model, every tensor including the norm gains starts at zero.
using Grads = GluTransformer;

inline Grads zero_grads(const ModelConfig& cfg) {
  Grads g = GluTransformer::zeros(cfg);
  for (auto& l : g.layers) {
    std::fill(l.attn_norm_gain.begin(), l.attn_norm_gain.end(), 0.0);
    std::fill(l.ffn_norm_gain.begin(), l.ffn_norm_gain.end(), 0.0);
  }
  std::fill(g.final_norm_gain.begin(), g.final_norm_gain.end(), 0.0);
  return g;
}

namespace detail {

// Cross-entropy loss at the final position plus parameter gradients,
// accumulated into `grads`.
inline double backward_example(const GluTransformer& model, const TrainExample& ex,
                               Grads& grads) {
  const Activations acts = forward_acts(model, ex.tokens, nullptr, false);
  const auto& cfg = model.config;
  const int seq = static_cast<int>(ex.tokens.size());
  const int d = cfg.d_model;
  const int ffn = cfg.ffn_dim;
  const int nh = cfg.num_heads;
  const int hd = cfg.head_dim();
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
  const int pos = acts.pred_pos;

  Vec probs(acts.logits.row(pos).begin(), acts.logits.row(pos).end());
  softmax_inplace(probs);
  const double p_ans = probs[static_cast<std::size_t>(ex.answer_token)];
  const double loss = -std::log(std::max(p_ans, 1e-300));

  // d loss / d logits at the prediction position = probs - onehot
  Vec dlogits = probs;
  dlogits[static_cast<std::size_t>(ex.answer_token)] -= 1.0;

  // unembed
  {
    const auto fn = acts.final_normed.row(pos);
    for (int i = 0; i < d; ++i) {
      const double fni = fn[static_cast<std::size_t>(i)];
      double* grow = grads.unembed.data.data() + static_cast<std::size_t>(i) * cfg.vocab_size;
      for (int j = 0; j < cfg.vocab_size; ++j) grow[j] += fni * dlogits[static_cast<std::size_t>(j)];
    }
  }
  Matrix dx(seq, d);
  {
    Vec dfn(static_cast<std::size_t>(d));
    vec_mat_t(dlogits, model.unembed, dfn);
    rmsnorm_backward_gain(acts.x_final.row(pos), kRmsEps, dfn, grads.final_norm_gain);
    rmsnorm_backward(acts.x_final.row(pos), model.final_norm_gain, kRmsEps, dfn,
                     dx.row(pos));
  }

  Matrix dgated(seq, ffn), df(seq, ffn), dgate_pre(seq, ffn);
  Matrix dh(seq, d), dhn(seq, d), dmix(seq, d), dq(seq, d), dk(seq, d), dv(seq, d);
  Matrix dxa(seq, d), tmp(seq, d);

  for (int li = cfg.num_layers - 1; li >= 0; --li) {
    const auto& L = acts.layers[static_cast<std::size_t>(li)];
    const auto& P = model.layers[static_cast<std::size_t>(li)];
    auto& G = grads.layers[static_cast<std::size_t>(li)];

    // x_out = h + (f . g) w_down
    matmul_a_bt(dx, P.w_down, dgated);
    for (std::size_t i = 0; i < dgated.data.size(); ++i) {
      df.data[i] = dgated.data[i] * L.g.data[i];
      dgate_pre.data[i] = dgated.data[i] * L.f.data[i] * silu_grad(L.gate_pre.data[i]);
    }
    {
      Matrix gated(seq, ffn);
      for (std::size_t i = 0; i < gated.data.size(); ++i)
        gated.data[i] = L.f.data[i] * L.g.data[i];
      Matrix gw;
      matmul_at_b(gated, dx, gw);
      for (std::size_t i = 0; i < gw.data.size(); ++i) G.w_down.data[i] += gw.data[i];
    }
    {
      Matrix gw;
      matmul_at_b(L.h_norm, df, gw);
      for (std::size_t i = 0; i < gw.data.size(); ++i) G.w_up.data[i] += gw.data[i];
      matmul_at_b(L.h_norm, dgate_pre, gw);
      for (std::size_t i = 0; i < gw.data.size(); ++i) G.w_gate.data[i] += gw.data[i];
    }
    matmul_a_bt(df, P.w_up, dhn);
    matmul_a_bt(dgate_pre, P.w_gate, tmp);
    for (std::size_t i = 0; i < dhn.data.size(); ++i) dhn.data[i] += tmp.data[i];

    dh = dx;  // residual
    for (int p = 0; p < seq; ++p) {
      rmsnorm_backward_gain(L.h.row(p), kRmsEps, dhn.row(p), G.ffn_norm_gain);
      rmsnorm_backward(L.h.row(p), P.ffn_norm_gain, kRmsEps, dhn.row(p), dh.row(p));
    }

    // h = x + attn_mix w_o
    matmul_a_bt(dh, P.wo, dmix);
    {
      Matrix gw;
      matmul_at_b(L.attn_mix, dh, gw);
      for (std::size_t i = 0; i < gw.data.size(); ++i) G.wo.data[i] += gw.data[i];
    }
    dq.zero();
    dk.zero();
    dv.zero();
    for (int h = 0; h < nh; ++h) {
      const int off = h * hd;
      for (int p = 0; p < seq; ++p) {
        const double* arow = L.att.data.data() +
                             (static_cast<std::size_t>(h) * seq + p) * static_cast<std::size_t>(seq);
        const double* dmixp = dmix.data.data() + static_cast<std::size_t>(p) * d + off;
        double dot_sum = 0.0;
        Vec datt(static_cast<std::size_t>(p) + 1);
        for (int j = 0; j <= p; ++j) {
          const double* vj = L.v.data.data() + static_cast<std::size_t>(j) * d + off;
          double a = 0.0;
          for (int e = 0; e < hd; ++e) a += dmixp[e] * vj[e];
          datt[static_cast<std::size_t>(j)] = a;
          dot_sum += a * arow[j];
          double* dvj = dv.data.data() + static_cast<std::size_t>(j) * d + off;
          for (int e = 0; e < hd; ++e) dvj[e] += arow[j] * dmixp[e];
        }
        const double* qp = L.q.data.data() + static_cast<std::size_t>(p) * d + off;
        double* dqp = dq.data.data() + static_cast<std::size_t>(p) * d + off;
        for (int j = 0; j <= p; ++j) {
          const double dscore =
              arow[j] * (datt[static_cast<std::size_t>(j)] - dot_sum) * inv_sqrt_hd;
          const double* kj = L.k.data.data() + static_cast<std::size_t>(j) * d + off;
          double* dkj = dk.data.data() + static_cast<std::size_t>(j) * d + off;
          for (int e = 0; e < hd; ++e) {
            dqp[e] += dscore * kj[e];
            dkj[e] += dscore * qp[e];
          }
        }
      }
    }
    {
      Matrix gw;
      matmul_at_b(L.xa_norm, dq, gw);
      for (std::size_t i = 0; i < gw.data.size(); ++i) G.wq.data[i] += gw.data[i];
      matmul_at_b(L.xa_norm, dk, gw);
      for (std::size_t i = 0; i < gw.data.size(); ++i) G.wk.data[i] += gw.data[i];
      matmul_at_b(L.xa_norm, dv, gw);
      for (std::size_t i = 0; i < gw.data.size(); ++i) G.wv.data[i] += gw.data[i];
    }
    matmul_a_bt(dq, P.wq, dxa);
    matmul_a_bt(dk, P.wk, tmp);
    for (std::size_t i = 0; i < dxa.data.size(); ++i) dxa.data[i] += tmp.data[i];
    matmul_a_bt(dv, P.wv, tmp);
    for (std::size_t i = 0; i < dxa.data.size(); ++i) dxa.data[i] += tmp.data[i];

    dx = dh;  // residual
    for (int p = 0; p < seq; ++p) {
      rmsnorm_backward_gain(L.x.row(p), kRmsEps, dxa.row(p), G.attn_norm_gain);
      rmsnorm_backward(L.x.row(p), P.attn_norm_gain, kRmsEps, dxa.row(p), dx.row(p));
    }
  }

  // embeddings
  for (int p = 0; p < seq; ++p) {
    const auto dr = dx.row(p);
    auto te = grads.tok_embed.row(ex.tokens[static_cast<std::size_t>(p)]);
    auto pe = grads.pos_embed.row(p);
    for (int e = 0; e < d; ++e) {
      te[static_cast<std::size_t>(e)] += dr[static_cast<std::size_t>(e)];
      pe[static_cast<std::size_t>(e)] += dr[static_cast<std::size_t>(e)];
    }
  }
  return loss;
}

inline void sgd_step(GluTransformer& model, const Grads& grads, double scale) {
  auto upd = [&](Matrix& w, const Matrix& g) {
    for (std::size_t i = 0; i < w.data.size(); ++i) w.data[i] -= scale * g.data[i];
  };
  auto updv = [&](Vec& w, const Vec& g) {
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= scale * g[i];
  };
  upd(model.tok_embed, grads.tok_embed);
  upd(model.pos_embed, grads.pos_embed);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    upd(model.layers[l].wq, grads.layers[l].wq);
    upd(model.layers[l].wk, grads.layers[l].wk);
    upd(model.layers[l].wv, grads.layers[l].wv);
    upd(model.layers[l].wo, grads.layers[l].wo);
    upd(model.layers[l].w_up, grads.layers[l].w_up);
    upd(model.layers[l].w_gate, grads.layers[l].w_gate);
    upd(model.layers[l].w_down, grads.layers[l].w_down);
    updv(model.layers[l].attn_norm_gain, grads.layers[l].attn_norm_gain);
    updv(model.layers[l].ffn_norm_gain, grads.layers[l].ffn_norm_gain);
  }
  updv(model.final_norm_gain, grads.final_norm_gain);
  upd(model.unembed, grads.unembed);
}

}  // namespace detail

inline std::vector<TrainExample> training_examples(
    const std::vector<MultiChoiceQuery>& queries) {
  std::vector<TrainExample> out;
  for (const auto& q : queries) {
    require(!q.prompts.empty(), "query ", q.id, " has no rendered prompts");
    for (const auto& p : q.prompts) {
      require(!p.token_ids.empty(), "query ", q.id, " prompts not tokenized");
      out.push_back({p.token_ids, p.answer_token});
    }
  }
  return out;
}

// Fraction of instances whose predicted option letter (argmax over the four
// letter tokens at the final position) matches the answer.
inline double letter_accuracy(const GluTransformer& model,
                              const std::vector<TrainExample>& examples) {
  int correct = 0;
  for (const auto& ex : examples) {
    const Activations acts = forward_acts(model, ex.tokens, nullptr, false);
    const auto logits = acts.logits.row(acts.pred_pos);
    int best = 0;
    for (int l = 1; l < 4; ++l)
      if (logits[static_cast<std::size_t>(l)] > logits[static_cast<std::size_t>(best)]) best = l;
    if (best == ex.answer_token) ++correct;
  }
  return examples.empty() ? 0.0
                          : static_cast<double>(correct) /
                                static_cast<double>(examples.size());
}

// SGD on the answer-letter cross-entropy. Stops when training accuracy
// reaches target_accuracy or the epoch limit. Deterministic per seed.
inline TrainLog train(GluTransformer& model, const std::vector<MultiChoiceQuery>& queries,
                      const TrainConfig& cfg) {
  cfg.validate();
  require(!queries.empty(), "training corpus is empty");
  std::vector<TrainExample> examples = training_examples(queries);
  for (const auto& ex : examples)
    for (int t : ex.tokens)
      require(t < model.config.vocab_size,
              "corpus token id ", t, " exceeds model vocabulary");

  TrainLog log;
  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, "epoch", static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t done = 0;
    while (done < order.size()) {
      const std::size_t batch_end =
          std::min(done + static_cast<std::size_t>(cfg.batch_size), order.size());
      Grads grads = zero_grads(model.config);
      for (std::size_t i = done; i < batch_end; ++i)
        loss_sum += detail::backward_example(model, examples[order[i]], grads);
      const double scale = cfg.learning_rate / static_cast<double>(batch_end - done);
      detail::sgd_step(model, grads, scale);
      done = batch_end;
    }
    EpochStats stats;
    stats.loss = loss_sum / static_cast<double>(examples.size());
    require(std::isfinite(stats.loss), "training diverged: loss is not finite at epoch ",
            epoch);
    stats.accuracy = letter_accuracy(model, examples);
    log.epochs.push_back(stats);
    if (stats.accuracy >= cfg.target_accuracy) {
      log.reached_target = true;
      break;
    }
  }
  return log;
}

}  // namespace qrn
