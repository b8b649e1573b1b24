// Integrated-gradient neuron attribution.
//
// For one prompt and one layer, each neuron's raw attribution is the
// right-endpoint Riemann sum
//
//     raw_i = (f̄_i / m) * Σ_{k=1..m} dP(k/m * f̄) / df_i
//
// where the k-th term scales the whole layer's f vector jointly to
// (k/m) f̄ at the prediction position and takes one gradient, so all
// ffn_dim attributions cost m passes per layer. The exact per-neuron
// path (clamping one neuron at a time, m passes per neuron) is kept
// behind a flag for oracle cross-checks on small layers.
//
// A query's raw score sums its |Q| prompt attributions; normalized
// attribution divides by Z, the signed sum of raw scores over all
// neurons of all layers, so na sums to 1 per query.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "qrn/corpus.hpp"
#include "qrn/model.hpp"

namespace qrn {

struct IgConfig {
  int ig_steps = 16;  // Riemann steps m
  AttrTarget target = AttrTarget::pre_gate_f;
  bool per_neuron_path = false;

  void validate() const { require(ig_steps >= 1, "ig_steps must be >= 1"); }
};

// The Riemann scheme on a scalar activation, exposed for direct tests:
// (f_bar/m) * Σ_{k=1..m} grad_at(k/m * f_bar).
inline double riemann_attribution(double f_bar, int m,
                                  const std::function<double(double)>& grad_at) {
  require(m >= 1, "ig_steps must be >= 1");
  double acc = 0.0;
  for (int k = 1; k <= m; ++k)
    acc += grad_at(static_cast<double>(k) / m * f_bar);
  return f_bar / static_cast<double>(m) * acc;
}

// Raw attributions for every neuron of `layer` on one prompt, via an
// existing scoring cache.
inline Vec integrated_attribution_cached(const ScoringCache& cache, int layer,
                                         int answer_token, const IgConfig& cfg) {
  cfg.validate();
  const auto base = (cfg.target == AttrTarget::pre_gate_f) ? cache.clean_f(layer)
                                                           : cache.clean_g(layer);
  const int ffn = static_cast<int>(base.size());
  const int m = cfg.ig_steps;
  Vec raw(static_cast<std::size_t>(ffn), 0.0);

  if (!cfg.per_neuron_path) {
    Vec scaled(static_cast<std::size_t>(ffn));
    Vec grad;
    for (int k = 1; k <= m; ++k) {
      const double alpha = static_cast<double>(k) / m;
      for (int i = 0; i < ffn; ++i) scaled[static_cast<std::size_t>(i)] = alpha * base[static_cast<std::size_t>(i)];
      cache.score(layer, scaled, answer_token, &grad, cfg.target);
      for (int i = 0; i < ffn; ++i) raw[static_cast<std::size_t>(i)] += grad[static_cast<std::size_t>(i)];
    }
    for (int i = 0; i < ffn; ++i)
      raw[static_cast<std::size_t>(i)] *= base[static_cast<std::size_t>(i)] / static_cast<double>(m);
    return raw;
  }

  // exact per-neuron path: every other neuron stays at its recorded value
  Vec value(base.begin(), base.end());
  Vec grad;
  for (int i = 0; i < ffn; ++i) {
    double acc = 0.0;
    for (int k = 1; k <= m; ++k) {
      value[static_cast<std::size_t>(i)] = static_cast<double>(k) / m * base[static_cast<std::size_t>(i)];
      cache.score(layer, value, answer_token, &grad, cfg.target);
      acc += grad[static_cast<std::size_t>(i)];
    }
    value[static_cast<std::size_t>(i)] = base[static_cast<std::size_t>(i)];
    raw[static_cast<std::size_t>(i)] = base[static_cast<std::size_t>(i)] / static_cast<double>(m) * acc;
  }
  return raw;
}

inline Vec integrated_attribution(const GluTransformer& model,
                                  const PromptInstance& prompt, int layer,
                                  const IgConfig& cfg) {
  require(!prompt.token_ids.empty(), "prompt is not tokenized");
  ScoringCache cache(model, prompt.token_ids);
  return integrated_attribution_cached(cache, layer, prompt.answer_token, cfg);
}

// Per-query attribution table over every (layer, neuron).
struct AttributionTable {
  std::string query_id;
  int num_layers = 0;
  int ffn_dim = 0;
  Matrix raw;        // layers x ffn, summed over the query's prompts
  Matrix raw_first;  // layers x ffn, first template only (baseline use)
  Matrix na;         // raw / Z
  double z = 0.0;
  // recorded baselines per prompt: f̄ and ḡ at the prediction position
  std::vector<Matrix> fbar;  // per prompt, layers x ffn
  std::vector<Matrix> gbar;  // per prompt, layers x ffn

  double na_at(const NeuronId& n) const { return na.at(n.layer, n.index); }
  double raw_at(const NeuronId& n) const { return raw.at(n.layer, n.index); }
};

// Eq-level contract: raw = Σ_prompts integrated attribution; na = raw / Z
// with Z = Σ raw over all neurons of all layers. A vanishing Z is reported
// as an explicit failure, never a silent division.
inline AttributionTable neuron_attribution(const GluTransformer& model,
                                           const MultiChoiceQuery& query,
                                           const IgConfig& cfg) {
  cfg.validate();
  require(!query.prompts.empty(), "query ", query.id, " has no prompts");
  const int layers = model.config.num_layers;
  const int ffn = model.config.ffn_dim;

  AttributionTable table;
  table.query_id = query.id;
  table.num_layers = layers;
  table.ffn_dim = ffn;
  table.raw = Matrix(layers, ffn);
  table.raw_first = Matrix(layers, ffn);

  // per-prompt contributions are accumulated in template order, so the
  // table is invariant to any permutation of the query's prompts
  std::vector<std::pair<int, std::size_t>> order;
  for (std::size_t pi = 0; pi < query.prompts.size(); ++pi)
    order.emplace_back(query.prompts[pi].template_id, pi);
  std::sort(order.begin(), order.end());

  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const auto& prompt = query.prompts[order[oi].second];
    require(!prompt.token_ids.empty(), "query ", query.id, " prompts not tokenized");
    ScoringCache cache(model, prompt.token_ids);
    Matrix fbar(layers, ffn), gbar(layers, ffn);
    for (int l = 0; l < layers; ++l) {
      const auto f = cache.clean_f(l);
      const auto g = cache.clean_g(l);
      std::copy(f.begin(), f.end(), fbar.row(l).begin());
      std::copy(g.begin(), g.end(), gbar.row(l).begin());
      const Vec raw = integrated_attribution_cached(cache, l, prompt.answer_token, cfg);
      auto acc = table.raw.row(l);
      for (int i = 0; i < ffn; ++i) acc[static_cast<std::size_t>(i)] += raw[static_cast<std::size_t>(i)];
      if (oi == 0) {
        auto first = table.raw_first.row(l);
        std::copy(raw.begin(), raw.end(), first.begin());
      }
    }
    table.fbar.push_back(std::move(fbar));
    table.gbar.push_back(std::move(gbar));
  }

  table.z = 0.0;
  for (double v : table.raw.data) table.z += v;
  require(std::abs(table.z) >= 1e-12,
          "degenerate attribution normalization for query ", query.id,
          ": |Z| = ", std::abs(table.z));
  table.na = table.raw;
  for (double& v : table.na.data) v /= table.z;
  return table;
}

// Completeness pieces for one (prompt, layer): the summed raw attribution
// and the exact path endpoints P(f̄) - P(0).
struct CompletenessCheck {
  double sum_raw = 0.0;
  double delta_p = 0.0;

  double residual() const { return std::abs(sum_raw - delta_p); }
  double relative_residual() const {
    return residual() / std::max(std::abs(delta_p), 1e-300);
  }
};

inline CompletenessCheck completeness_check(const ScoringCache& cache, int layer,
                                            int answer_token, const IgConfig& cfg) {
  CompletenessCheck c;
  const Vec raw = integrated_attribution_cached(cache, layer, answer_token, cfg);
  for (double v : raw) c.sum_raw += v;
  const auto base = (cfg.target == AttrTarget::pre_gate_f) ? cache.clean_f(layer)
                                                           : cache.clean_g(layer);
  const Vec zeros(base.size(), 0.0);
  const double p_full = cache.score(layer, base, answer_token, nullptr, cfg.target);
  const double p_zero = cache.score(layer, zeros, answer_token, nullptr, cfg.target);
  c.delta_p = p_full - p_zero;
  return c;
}

// ---- exports ----

// CSV: query_id, layer, neuron, raw, na
inline void export_attribution_csv(const std::vector<AttributionTable>& tables,
                                   const std::string& path) {
  std::string out = "query_id,layer,neuron,raw,na\n";
  for (const auto& t : tables)
    for (int l = 0; l < t.num_layers; ++l)
      for (int i = 0; i < t.ffn_dim; ++i) {
        out += t.query_id;
        out += ',';
        out += std::to_string(l);
        out += ',';
        out += std::to_string(i);
        out += ',';
        out += format_double(t.raw.at(l, i));
        out += ',';
        out += format_double(t.na.at(l, i));
        out += '\n';
      }
  write_file(path, out);
}

// Sidecar binary with the f̄ snapshots, keyed by (query, template, layer).
inline void export_fbar_sidecar(const std::vector<AttributionTable>& tables,
                                const std::string& path) {
  std::string out;
  out.append("QRNFBAR1", 8);
  auto u32 = [&out](std::uint32_t v) {
    out.append(reinterpret_cast<const char*>(&v), sizeof v);
  };
  std::uint32_t entries = 0;
  for (const auto& t : tables)
    entries += static_cast<std::uint32_t>(t.fbar.size()) *
               static_cast<std::uint32_t>(t.num_layers);
  u32(entries);
  for (const auto& t : tables)
    for (std::size_t p = 0; p < t.fbar.size(); ++p)
      for (int l = 0; l < t.num_layers; ++l) {
        u32(static_cast<std::uint32_t>(t.query_id.size()));
        out += t.query_id;
        u32(static_cast<std::uint32_t>(p));
        u32(static_cast<std::uint32_t>(l));
        u32(static_cast<std::uint32_t>(t.ffn_dim));
        out.append(reinterpret_cast<const char*>(t.fbar[p].row(l).data()),
                   static_cast<std::size_t>(t.ffn_dim) * sizeof(double));
      }
  write_file(path, out);
}

}  // namespace qrn
