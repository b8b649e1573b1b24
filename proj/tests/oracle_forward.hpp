// Test-only reference implementations, kept independent of the library's
// forward/backward paths: a straight-line forward pass coded directly from
// the architecture definition, and finite-difference helpers.
#pragma once

#include <cmath>
#include <vector>

#include "qrn/model.hpp"

namespace qrn_test {

using D2 = std::vector<std::vector<double>>;

// Naive forward pass over nested vectors. No shared kernels with qrn::.
inline D2 reference_logits(const qrn::GluTransformer& m, const std::vector<int>& toks) {
  const int seq = static_cast<int>(toks.size());
  const int d = m.config.d_model;
  const int ffn = m.config.ffn_dim;
  const int nh = m.config.num_heads;
  const int hd = d / nh;
  const double eps = qrn::kRmsEps;

  auto norm_row = [&](const std::vector<double>& x, const qrn::Vec& gain) {
    double ss = 0.0;
    for (int e = 0; e < d; ++e) ss += x[e] * x[e];
    const double r = std::sqrt(ss / d + eps);
    std::vector<double> y(d);
    for (int e = 0; e < d; ++e) y[e] = x[e] / r * gain[e];
    return y;
  };
  auto project = [&](const std::vector<double>& x, const qrn::Matrix& w) {
    std::vector<double> y(static_cast<std::size_t>(w.cols), 0.0);
    for (int j = 0; j < w.cols; ++j)
      for (int i = 0; i < w.rows; ++i) y[j] += x[i] * w.at(i, j);
    return y;
  };

  D2 x(seq, std::vector<double>(d));
  for (int p = 0; p < seq; ++p)
    for (int e = 0; e < d; ++e)
      x[p][e] = m.tok_embed.at(toks[p], e) + m.pos_embed.at(p, e);

  for (int li = 0; li < m.config.num_layers; ++li) {
    const auto& P = m.layers[static_cast<std::size_t>(li)];
    D2 q(seq), k(seq), v(seq);
    for (int p = 0; p < seq; ++p) {
      auto xa = norm_row(x[p], P.attn_norm_gain);
      q[p] = project(xa, P.wq);
      k[p] = project(xa, P.wk);
      v[p] = project(xa, P.wv);
    }
    D2 attn_out(seq, std::vector<double>(d, 0.0));
    for (int p = 0; p < seq; ++p) {
      std::vector<double> mix(d, 0.0);
      for (int h = 0; h < nh; ++h) {
        std::vector<double> sc(p + 1);
        double mx = -1e300;
        for (int j = 0; j <= p; ++j) {
          double s = 0.0;
          for (int e = 0; e < hd; ++e) s += q[p][h * hd + e] * k[j][h * hd + e];
          sc[j] = s / std::sqrt(static_cast<double>(hd));
          mx = std::max(mx, sc[j]);
        }
        double z = 0.0;
        for (int j = 0; j <= p; ++j) {
          sc[j] = std::exp(sc[j] - mx);
          z += sc[j];
        }
        for (int j = 0; j <= p; ++j)
          for (int e = 0; e < hd; ++e) mix[h * hd + e] += sc[j] / z * v[j][h * hd + e];
      }
      attn_out[p] = project(mix, P.wo);
    }
    for (int p = 0; p < seq; ++p) {
      std::vector<double> h(d);
      for (int e = 0; e < d; ++e) h[e] = x[p][e] + attn_out[p][e];
      auto hn = norm_row(h, P.ffn_norm_gain);
      auto f = project(hn, P.w_up);
      auto gp = project(hn, P.w_gate);
      std::vector<double> gated(ffn);
      for (int i = 0; i < ffn; ++i)
        gated[i] = f[i] * (gp[i] / (1.0 + std::exp(-gp[i])));
      auto out = project(gated, P.w_down);
      for (int e = 0; e < d; ++e) x[p][e] = h[e] + out[e];
    }
  }

  D2 logits(seq);
  for (int p = 0; p < seq; ++p)
    logits[p] = project(norm_row(x[p], m.final_norm_gain), m.unembed);
  return logits;
}

// Central finite difference of answer_prob with respect to one f value at
// the prediction position, evaluated through the public override interface.
inline double fd_grad_f(const qrn::GluTransformer& m, const std::vector<int>& toks,
                        int answer_token, const qrn::NeuronId& n, double eps) {
  const qrn::ForwardTrace clean = qrn::forward(m, toks);
  const double base = clean.f_at(n);
  auto prob_at = [&](double value) {
    qrn::InterventionSpec spec;
    spec.mode = qrn::InterventionSpec::Mode::set_value;
    spec.neurons = {n};
    spec.value = value;
    const qrn::ForwardTrace t = qrn::forward_with_override(m, toks, spec, &clean);
    return qrn::prob_from_logits(t.logits.row(t.pred_pos), answer_token);
  };
  return (prob_at(base + eps) - prob_at(base - eps)) / (2.0 * eps);
}

}  // namespace qrn_test
