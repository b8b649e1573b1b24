// From attribution tables to QR neuron sets: thresholded coarse clusters,
// inverse cluster attribution, common-neuron detection, and top-v selection
// by the combined naica score.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "qrn/attribution.hpp"

namespace qrn {

// Coarse per-query cluster: neurons whose na exceeds t_frac times the
// query's maximum na.
struct Cluster {
  std::string query_id;
  std::vector<NeuronId> members;  // sorted by (layer, index)
  double threshold_used = 0.0;
  bool empty_warning = false;  // max na was not positive
};

struct ClusterSet {
  std::vector<Cluster> clusters;

  int size() const { return static_cast<int>(clusters.size()); }

  std::map<NeuronId, int> occurrence_counts() const {
    std::map<NeuronId, int> counts;
    for (const auto& c : clusters)
      for (const auto& n : c.members) counts[n]++;
    return counts;
  }

  int count(const NeuronId& n) const {
    int c = 0;
    for (const auto& cl : clusters)
      if (std::binary_search(cl.members.begin(), cl.members.end(), n)) ++c;
    return c;
  }
};

struct NeuronScore {
  NeuronId id;
  double na = 0.0;
  double ica = 0.0;
  double naica = 0.0;
};

struct CommonNeuronSet {
  std::vector<NeuronId> neurons;  // sorted
  std::map<NeuronId, int> occurrence;
  double u = 0.0;
  int total_clusters = 0;

  bool contains(const NeuronId& n) const {
    return std::binary_search(neurons.begin(), neurons.end(), n);
  }
};

struct QrNeuronSet {
  std::string query_id;
  std::vector<NeuronScore> neurons;  // naica descending
  double t_frac = 0.0;
  double u = 0.0;
  int v = 0;

  std::vector<NeuronId> ids() const {
    std::vector<NeuronId> out;
    out.reserve(neurons.size());
    for (const auto& s : neurons) out.push_back(s.id);
    return out;
  }
};

inline Cluster build_cluster(const AttributionTable& table, double t_frac) {
  require(table.num_layers > 0 && table.ffn_dim > 0, "attribution table is empty");
  Cluster c;
  c.query_id = table.query_id;
  double max_na = -1e300;
  for (double v : table.na.data) max_na = std::max(max_na, v);
  if (!(max_na > 0.0)) {
    c.empty_warning = true;
    c.threshold_used = 0.0;
    return c;
  }
  c.threshold_used = t_frac * max_na;
  for (int l = 0; l < table.num_layers; ++l)
    for (int i = 0; i < table.ffn_dim; ++i)
      if (table.na.at(l, i) > c.threshold_used) c.members.push_back({l, i});
  std::sort(c.members.begin(), c.members.end());
  return c;
}

// ica(n) = ln(|C| / (count(n) + 1))
inline double inverse_cluster_attribution(const NeuronId& neuron,
                                          const ClusterSet& clusters) {
  require(clusters.size() >= 1, "cluster set is empty");
  const int count = clusters.count(neuron);
  return std::log(static_cast<double>(clusters.size()) /
                  (static_cast<double>(count) + 1.0));
}

// Neurons appearing in strictly more than u of the clusters (u a fraction).
inline CommonNeuronSet detect_common(const ClusterSet& clusters, double u) {
  require(clusters.size() >= 1, "cluster set is empty");
  require(u > 0.0 && u < 1.0, "common-neuron frequency u must be in (0,1)");
  CommonNeuronSet set;
  set.u = u;
  set.total_clusters = clusters.size();
  set.occurrence = clusters.occurrence_counts();
  for (const auto& [n, count] : set.occurrence)
    if (static_cast<double>(count) / clusters.size() > u) set.neurons.push_back(n);
  std::sort(set.neurons.begin(), set.neurons.end());
  return set;
}

// Rank the query's cluster members by naica descending (ties by
// (layer, index) ascending), take the top v, then remove common neurons.
inline QrNeuronSet score_and_select(const AttributionTable& table,
                                    const Cluster& cluster,
                                    const ClusterSet& clusters,
                                    const CommonNeuronSet& common, int v,
                                    double t_frac, double u) {
  QrNeuronSet set;
  set.query_id = table.query_id;
  set.t_frac = t_frac;
  set.u = u;
  set.v = v;

  std::vector<NeuronScore> scored;
  scored.reserve(cluster.members.size());
  for (const auto& n : cluster.members) {
    NeuronScore s;
    s.id = n;
    s.na = table.na_at(n);
    s.ica = inverse_cluster_attribution(n, clusters);
    s.naica = s.na * s.ica;
    scored.push_back(s);
  }
  std::sort(scored.begin(), scored.end(), [](const NeuronScore& a, const NeuronScore& b) {
    if (a.naica != b.naica) return a.naica > b.naica;
    return a.id < b.id;
  });
  if (static_cast<int>(scored.size()) > v) scored.resize(static_cast<std::size_t>(v));
  for (const auto& s : scored)
    if (!common.contains(s.id)) set.neurons.push_back(s);
  return set;
}

// ---- exports ----

inline nlohmann::json qr_set_to_json(const QrNeuronSet& set) {
  nlohmann::json j;
  j["query_id"] = set.query_id;
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : set.neurons)
    arr.push_back({{"layer", s.id.layer},
                   {"index", s.id.index},
                   {"na", s.na},
                   {"ica", s.ica},
                   {"naica", s.naica}});
  j["neurons"] = std::move(arr);
  j["params"] = {{"t_frac", set.t_frac}, {"u", set.u}, {"v", set.v}};
  return j;
}

inline void save_qr_sets(const std::vector<QrNeuronSet>& sets, const std::string& path) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : sets) arr.push_back(qr_set_to_json(s));
  write_file(path, arr.dump(2) + "\n");
}

inline std::vector<QrNeuronSet> load_qr_sets(const std::string& path) {
  const nlohmann::json arr = nlohmann::json::parse(read_file(path));
  std::vector<QrNeuronSet> out;
  for (const auto& j : arr) {
    QrNeuronSet s;
    s.query_id = j.at("query_id").get<std::string>();
    for (const auto& n : j.at("neurons")) {
      NeuronScore sc;
      sc.id = NeuronId{n.at("layer").get<int>(), n.at("index").get<int>()};
      sc.na = n.at("na").get<double>();
      sc.ica = n.at("ica").get<double>();
      sc.naica = n.at("naica").get<double>();
      s.neurons.push_back(sc);
    }
    s.t_frac = j.at("params").at("t_frac").get<double>();
    s.u = j.at("params").at("u").get<double>();
    s.v = j.at("params").at("v").get<int>();
    out.push_back(std::move(s));
  }
  return out;
}

inline void save_common_neurons(const CommonNeuronSet& set, const std::string& path) {
  nlohmann::json j;
  j["u"] = set.u;
  j["total_clusters"] = set.total_clusters;
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& n : set.neurons)
    arr.push_back({{"layer", n.layer},
                   {"index", n.index},
                   {"count", set.occurrence.at(n)}});
  j["neurons"] = std::move(arr);
  write_file(path, j.dump(2) + "\n");
}

}  // namespace qrn
