// Aggregate statistics over located neurons: domain overlap rates, layer
// distributions, geographical heatmaps, and vocabulary projections of
// W_down rows (logit-lens style).
#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "qrn/qrneurons.hpp"

namespace qrn {

// |A ∩ B| / min(|A|, |B|); 0 when either set is empty. The Jaccard variant
// |A ∩ B| / |A ∪ B| sits behind a flag for sensitivity checks.
inline double overlap_rate(const std::set<NeuronId>& a, const std::set<NeuronId>& b,
                           bool jaccard = false) {
  if (a.empty() || b.empty()) return 0.0;
  std::size_t inter = 0;
  for (const auto& n : a) inter += b.count(n);
  const double denom =
      jaccard ? static_cast<double>(a.size() + b.size() - inter)
              : static_cast<double>(std::min(a.size(), b.size()));
  return static_cast<double>(inter) / denom;
}

struct OverlapMatrix {
  std::vector<std::string> labels;
  Matrix values;
};

inline OverlapMatrix build_overlap(const std::map<std::string, std::set<NeuronId>>& sets,
                                   bool jaccard = false) {
  OverlapMatrix m;
  for (const auto& [label, _] : sets) m.labels.push_back(label);
  const int n = static_cast<int>(m.labels.size());
  m.values = Matrix(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      m.values.at(i, j) = overlap_rate(sets.at(m.labels[static_cast<std::size_t>(i)]),
                                       sets.at(m.labels[static_cast<std::size_t>(j)]), jaccard);
  return m;
}

// Occurrences of selected neurons per layer; the counts sum to the total
// number of selected occurrences across all sets.
inline std::vector<long> layer_histogram(const std::vector<QrNeuronSet>& sets,
                                         int num_layers) {
  std::vector<long> counts(static_cast<std::size_t>(num_layers), 0);
  for (const auto& s : sets)
    for (const auto& n : s.neurons) {
      require(n.id.layer >= 0 && n.id.layer < num_layers,
              "layer out of range in QR set");
      counts[static_cast<std::size_t>(n.id.layer)]++;
    }
  return counts;
}

struct HeatmapGrid {
  std::string domain;
  Matrix grid;  // num_layers x ffn_dim of accumulated naica
};

// grid[l][i] = Σ over the domain's queries of naica for selected neurons.
inline HeatmapGrid heatmap(const std::vector<QrNeuronSet>& sets,
                           const std::map<std::string, std::string>& query_domain,
                           const std::string& domain, int num_layers, int ffn_dim) {
  HeatmapGrid g;
  g.domain = domain;
  g.grid = Matrix(num_layers, ffn_dim);
  for (const auto& s : sets) {
    const auto it = query_domain.find(s.query_id);
    require(it != query_domain.end(), "unknown query id in QR sets: ", s.query_id);
    if (it->second != domain) continue;
    for (const auto& n : s.neurons) {
      require(n.id.layer < num_layers && n.id.index < ffn_dim,
              "neuron outside the model grid");
      g.grid.at(n.id.layer, n.id.index) += n.naica;
    }
  }
  return g;
}

// Row `neuron.index` of the layer's W_down projected through the
// unembedding (no final normalization applied); top-k tokens by logit,
// ties broken by token id.
inline std::vector<std::pair<int, double>> project_value_vector(
    const GluTransformer& model, const NeuronId& neuron, int k) {
  model.check_neuron(neuron);
  require(k >= 1 && k <= model.config.vocab_size, "top-k out of range");
  const auto row = model.layers[static_cast<std::size_t>(neuron.layer)].w_down.row(neuron.index);
  Vec logits(static_cast<std::size_t>(model.config.vocab_size));
  vec_mat(row, model.unembed, logits);
  std::vector<std::pair<int, double>> scored;
  scored.reserve(logits.size());
  for (int t = 0; t < model.config.vocab_size; ++t)
    scored.emplace_back(t, logits[static_cast<std::size_t>(t)]);
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  scored.resize(static_cast<std::size_t>(k));
  return scored;
}

// ---- exports ----

inline void save_overlap_csv(const OverlapMatrix& m, const std::string& path) {
  std::string out = "domain";
  for (const auto& l : m.labels) out += "," + l;
  out += "\n";
  for (int i = 0; i < m.values.rows; ++i) {
    out += m.labels[static_cast<std::size_t>(i)];
    for (int j = 0; j < m.values.cols; ++j) out += "," + format_double(m.values.at(i, j));
    out += "\n";
  }
  write_file(path, out);
}

inline void save_heatmap_csv(const HeatmapGrid& g, const std::string& path) {
  std::string out;
  for (int l = 0; l < g.grid.rows; ++l) {
    for (int i = 0; i < g.grid.cols; ++i) {
      if (i > 0) out += ",";
      out += format_double(g.grid.at(l, i));
    }
    out += "\n";
  }
  write_file(path, out);
}

// Plain-text PGM (P2), 0..255 grayscale scaled by the grid maximum.
inline void save_heatmap_pgm(const HeatmapGrid& g, const std::string& path) {
  double mx = 0.0;
  for (double v : g.grid.data) mx = std::max(mx, std::abs(v));
  std::string out = "P2\n" + std::to_string(g.grid.cols) + " " +
                    std::to_string(g.grid.rows) + "\n255\n";
  for (int l = 0; l < g.grid.rows; ++l) {
    for (int i = 0; i < g.grid.cols; ++i) {
      const int v = mx == 0.0
                        ? 0
                        : static_cast<int>(255.0 * std::abs(g.grid.at(l, i)) / mx);
      if (i > 0) out += " ";
      out += std::to_string(v);
    }
    out += "\n";
  }
  write_file(path, out);
}

inline nlohmann::json projection_to_json(const GluTransformer& model,
                                         const Tokenizer& tokenizer,
                                         const NeuronId& neuron, int k) {
  nlohmann::json tokens = nlohmann::json::array();
  for (const auto& [tok, logit] : project_value_vector(model, neuron, k))
    tokens.push_back({{"token", tokenizer.word_of(tok)}, {"logit", logit}});
  return {{"layer", neuron.layer}, {"index", neuron.index}, {"tokens", std::move(tokens)}};
}

// Raw W_down vectors for external projection tools.
inline void save_value_vectors_csv(const GluTransformer& model,
                                   const std::vector<NeuronId>& neurons,
                                   const std::string& path) {
  std::string out = "layer,index";
  for (int e = 0; e < model.config.d_model; ++e) out += ",d" + std::to_string(e);
  out += "\n";
  for (const auto& n : neurons) {
    model.check_neuron(n);
    out += std::to_string(n.layer) + "," + std::to_string(n.index);
    const auto row = model.layers[static_cast<std::size_t>(n.layer)].w_down.row(n.index);
    for (double v : row) out += "," + format_double(v);
    out += "\n";
  }
  write_file(path, out);
}

}  // namespace qrn
