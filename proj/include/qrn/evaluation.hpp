// Intervention experiments over located neuron sets: probability-change
// measurements and the PCR metric, knowledge-editing flip rates,
// neuron-based option prediction, and the baseline selectors.
#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "qrn/predict.hpp"
#include "qrn/qrneurons.hpp"

namespace qrn {

// 100 * (P_intervened - P_clean) / P_clean, averaged over the query's
// prompts. Baselines for boost come from each prompt's own clean forward.
inline double prob_change(const GluTransformer& model, const MultiChoiceQuery& query,
                          const InterventionSpec& spec) {
  require(!query.prompts.empty(), "query ", query.id, " has no prompts");
  double acc = 0.0;
  for (const auto& p : query.prompts) {
    const ForwardTrace clean = forward(model, p.token_ids);
    const double p_clean =
        prob_from_logits(clean.logits.row(clean.pred_pos), p.answer_token);
    require(p_clean >= 1e-12, "clean probability vanishes for query ", query.id);
    const ForwardTrace after = forward_with_override(model, p.token_ids, spec, &clean);
    const double p_after =
        prob_from_logits(after.logits.row(after.pred_pos), p.answer_token);
    acc += 100.0 * (p_after - p_clean) / p_clean;
  }
  return acc / static_cast<double>(query.prompts.size());
}

using NeuronSets = std::map<std::string, std::vector<NeuronId>>;

struct PcrRow {
  std::string query_id;
  std::string unrelated_id;
  double related_change = 0.0;
  double unrelated_change = 0.0;
};

struct PcrReport {
  InterventionSpec::Mode mode = InterventionSpec::Mode::boost;
  double related_mean = 0.0;
  double unrelated_mean = 0.0;
  double ratio = 0.0;  // |related_mean| / |unrelated_mean|
  std::vector<PcrRow> rows;
};

// Probability Change Ratio. Every related query is intervened with its own
// neuron set; the same set is applied to one randomly selected query from
// an unrelated domain.
inline PcrReport pcr(const GluTransformer& model, const NeuronSets& sets,
                     const std::vector<MultiChoiceQuery>& related,
                     const std::vector<MultiChoiceQuery>& unrelated_pool,
                     InterventionSpec::Mode mode, std::uint64_t seed) {
  PcrReport report;
  report.mode = mode;
  for (std::size_t i = 0; i < related.size(); ++i) {
    const auto& q = related[i];
    const auto it = sets.find(q.id);
    require(it != sets.end(), "no neuron set for query ", q.id);

    std::vector<const MultiChoiceQuery*> candidates;
    for (const auto& u : unrelated_pool)
      if (u.domain != q.domain) candidates.push_back(&u);
    require(!candidates.empty(), "no out-of-domain queries available for ", q.id);
    Rng rng(derive_seed(seed, "unrelated", i));
    const auto& uq = *candidates[rng.next_below(candidates.size())];

    InterventionSpec spec;
    spec.mode = mode;
    spec.neurons = it->second;

    PcrRow row;
    row.query_id = q.id;
    row.unrelated_id = uq.id;
    row.related_change = prob_change(model, q, spec);
    row.unrelated_change = prob_change(model, uq, spec);
    report.rows.push_back(row);
    report.related_mean += row.related_change;
    report.unrelated_mean += row.unrelated_change;
  }
  require(!report.rows.empty(), "pcr needs at least one related query");
  report.related_mean /= static_cast<double>(report.rows.size());
  report.unrelated_mean /= static_cast<double>(report.rows.size());
  report.ratio = std::abs(report.related_mean) /
                 std::max(std::abs(report.unrelated_mean), 1e-12);
  return report;
}

struct EditRow {
  std::string query_id;
  bool initially_correct = false;
  bool flipped = false;
};

struct EditReport {
  int suppress_eligible = 0;  // initially correct
  int suppress_flips = 0;     // correct -> incorrect under suppression
  int boost_eligible = 0;     // initially incorrect
  int boost_flips = 0;        // incorrect -> correct under boosting
  std::vector<EditRow> rows;

  double suppress_rate() const {
    return suppress_eligible == 0
               ? 0.0
               : static_cast<double>(suppress_flips) / suppress_eligible;
  }
  double boost_rate() const {
    return boost_eligible == 0 ? 0.0
                               : static_cast<double>(boost_flips) / boost_eligible;
  }
};

// Suppression targets initially-correct queries, boosting initially-
// incorrect ones; a flip counts when the predicted option changes
// accordingly. Every query lands in exactly one denominator.
inline EditReport editing_success(const GluTransformer& model, const NeuronSets& sets,
                                  const std::vector<MultiChoiceQuery>& queries) {
  EditReport report;
  for (const auto& q : queries) {
    const auto it = sets.find(q.id);
    require(it != sets.end(), "no neuron set for query ", q.id);
    EditRow row;
    row.query_id = q.id;
    row.initially_correct = predict_option(model, q) == q.correct_index;

    InterventionSpec spec;
    spec.neurons = it->second;
    if (row.initially_correct) {
      ++report.suppress_eligible;
      spec.mode = InterventionSpec::Mode::suppress;
      if (!spec.neurons.empty() &&
          predict_option(model, q, &spec) != q.correct_index) {
        row.flipped = true;
        ++report.suppress_flips;
      }
    } else {
      ++report.boost_eligible;
      spec.mode = InterventionSpec::Mode::boost;
      if (!spec.neurons.empty() &&
          predict_option(model, q, &spec) == q.correct_index) {
        row.flipped = true;
        ++report.boost_flips;
      }
    }
    report.rows.push_back(row);
  }
  return report;
}

// Appendix-style neuron-based prediction: sum the gradient of each option
// letter's probability with respect to the domain neurons and return the
// argmax option. `absolute` sums |gradient| instead of raw values.
inline int neuron_based_predict(const GluTransformer& model,
                                const MultiChoiceQuery& query,
                                const std::vector<NeuronId>& domain_neurons,
                                bool absolute = false) {
  require(!domain_neurons.empty(), "domain neuron set is empty");
  require(!query.prompts.empty(), "query ", query.id, " has no prompts");
  std::map<int, std::vector<int>> by_layer;
  for (const auto& n : domain_neurons) {
    model.check_neuron(n);
    by_layer[n.layer].push_back(n.index);
  }

  std::array<double, 4> option_mass = {0, 0, 0, 0};
  for (const auto& p : query.prompts) {
    ScoringCache cache(model, p.token_ids);
    for (int slot = 0; slot < 4; ++slot) {
      const int letter_token = Tokenizer::option_letter_id(slot);
      double total = 0.0;
      Vec grad;
      for (const auto& [layer, indices] : by_layer) {
        cache.score(layer, cache.clean_f(layer), letter_token, &grad);
        for (int idx : indices)
          total += absolute ? std::abs(grad[static_cast<std::size_t>(idx)])
                            : grad[static_cast<std::size_t>(idx)];
      }
      option_mass[static_cast<std::size_t>(p.option_perm[static_cast<std::size_t>(slot)])] += total;
    }
  }
  int best = 0;
  for (int k = 1; k < 4; ++k)
    if (option_mass[static_cast<std::size_t>(k)] > option_mass[static_cast<std::size_t>(best)]) best = k;
  return best;
}

// ---- neuron selection: QRNCA and its baselines ----

enum class BaselineMethod {
  random,
  activation,
  kn_star,
  qrnca_wo_ica,
  qrnca_w_common,
  qrnca
};

inline BaselineMethod baseline_from_string(const std::string& s) {
  if (s == "random") return BaselineMethod::random;
  if (s == "activation") return BaselineMethod::activation;
  if (s == "kn_star") return BaselineMethod::kn_star;
  if (s == "qrnca_wo_ica") return BaselineMethod::qrnca_wo_ica;
  if (s == "qrnca_w_common") return BaselineMethod::qrnca_w_common;
  if (s == "qrnca") return BaselineMethod::qrnca;
  fail("unknown selection method: ", s);
}

inline std::string to_string(BaselineMethod m) {
  switch (m) {
    case BaselineMethod::random: return "random";
    case BaselineMethod::activation: return "activation";
    case BaselineMethod::kn_star: return "kn_star";
    case BaselineMethod::qrnca_wo_ica: return "qrnca_wo_ica";
    case BaselineMethod::qrnca_w_common: return "qrnca_w_common";
    case BaselineMethod::qrnca: return "qrnca";
  }
  fail("unknown selection method");
}

// One batch's worth of locate artifacts.
struct SelectionBundle {
  std::vector<AttributionTable> tables;  // aligned with the query batch
  ClusterSet clusters;
  CommonNeuronSet common;
  std::vector<QrNeuronSet> qr_sets;
};

struct SelectionParams {
  IgConfig ig;
  double t_frac = 0.2;
  double u = 0.30;
  int v = 20;
};

// The full pipeline for a query batch: attribution tables, thresholded
// clusters, common neurons, then naica-ranked QR sets.
inline SelectionBundle select_qrnca(const GluTransformer& model,
                                    const std::vector<MultiChoiceQuery>& queries,
                                    const SelectionParams& params) {
  SelectionBundle bundle;
  for (const auto& q : queries)
    bundle.tables.push_back(neuron_attribution(model, q, params.ig));
  for (const auto& t : bundle.tables)
    bundle.clusters.clusters.push_back(build_cluster(t, params.t_frac));
  bundle.common = detect_common(bundle.clusters, params.u);
  for (std::size_t i = 0; i < bundle.tables.size(); ++i)
    bundle.qr_sets.push_back(score_and_select(
        bundle.tables[i], bundle.clusters.clusters[i], bundle.clusters,
        bundle.common, params.v, params.t_frac, params.u));
  return bundle;
}

namespace detail {

inline std::vector<NeuronId> top_by(const Matrix& values, int k) {
  std::vector<std::pair<double, NeuronId>> scored;
  for (int l = 0; l < values.rows; ++l)
    for (int i = 0; i < values.cols; ++i)
      scored.emplace_back(values.at(l, i), NeuronId{l, i});
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<NeuronId> out;
  for (int i = 0; i < k && i < static_cast<int>(scored.size()); ++i)
    out.push_back(scored[static_cast<std::size_t>(i)].second);
  return out;
}

}  // namespace detail

// Per-query neuron sets for a baseline method. Cardinality-matched methods
// (random, activation) mirror the QRNCA set sizes.
inline NeuronSets baseline_select(BaselineMethod method, const SelectionBundle& bundle,
                                  const ModelConfig& config, const SelectionParams& params,
                                  std::uint64_t seed) {
  NeuronSets out;
  for (std::size_t qi = 0; qi < bundle.tables.size(); ++qi) {
    const auto& table = bundle.tables[qi];
    const auto& qr = bundle.qr_sets[qi];
    std::vector<NeuronId> set;
    switch (method) {
      case BaselineMethod::qrnca:
        set = qr.ids();
        break;
      case BaselineMethod::random: {
        const int k = static_cast<int>(qr.neurons.size());
        Rng rng(derive_seed(seed, "random-baseline", qi));
        std::set<NeuronId> picked;
        while (static_cast<int>(picked.size()) < k) {
          const int layer = rng.next_int(0, config.num_layers);
          const int index = rng.next_int(0, config.ffn_dim);
          picked.insert(NeuronId{layer, index});
        }
        set.assign(picked.begin(), picked.end());
        break;
      }
      case BaselineMethod::activation: {
        // mean |f̄| at the prediction position over the query's prompts
        Matrix mean_abs(table.num_layers, table.ffn_dim);
        for (const auto& fbar : table.fbar)
          for (std::size_t i = 0; i < fbar.data.size(); ++i)
            mean_abs.data[i] += std::abs(fbar.data[i]);
        set = detail::top_by(mean_abs, static_cast<int>(qr.neurons.size()));
        break;
      }
      case BaselineMethod::kn_star:
        set = detail::top_by(table.raw_first, params.v);
        break;
      case BaselineMethod::qrnca_wo_ica:
        set = detail::top_by(table.na, params.v);
        break;
      case BaselineMethod::qrnca_w_common: {
        const auto& cluster = bundle.clusters.clusters[qi];
        std::vector<NeuronScore> scored;
        for (const auto& n : cluster.members) {
          NeuronScore s;
          s.id = n;
          s.na = table.na_at(n);
          s.ica = inverse_cluster_attribution(n, bundle.clusters);
          s.naica = s.na * s.ica;
          scored.push_back(s);
        }
        std::sort(scored.begin(), scored.end(),
                  [](const NeuronScore& a, const NeuronScore& b) {
                    if (a.naica != b.naica) return a.naica > b.naica;
                    return a.id < b.id;
                  });
        for (int i = 0; i < params.v && i < static_cast<int>(scored.size()); ++i)
          set.push_back(scored[static_cast<std::size_t>(i)].id);
        break;
      }
    }
    out[table.query_id] = std::move(set);
  }
  return out;
}

// ---- report exports ----

inline const char* mode_name(InterventionSpec::Mode m) {
  switch (m) {
    case InterventionSpec::Mode::boost: return "boost";
    case InterventionSpec::Mode::suppress: return "suppress";
    case InterventionSpec::Mode::set_value: return "set";
  }
  return "?";
}

inline nlohmann::json pcr_to_json(const PcrReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"query_id", row.query_id},
                    {"unrelated_id", row.unrelated_id},
                    {"related_change", row.related_change},
                    {"unrelated_change", row.unrelated_change}});
  return {{"mode", mode_name(r.mode)},
          {"related_mean", r.related_mean},
          {"unrelated_mean", r.unrelated_mean},
          {"ratio", r.ratio},
          {"rows", std::move(rows)}};
}

inline nlohmann::json edit_to_json(const EditReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"query_id", row.query_id},
                    {"initially_correct", row.initially_correct},
                    {"flipped", row.flipped}});
  return {{"suppress_eligible", r.suppress_eligible},
          {"suppress_flips", r.suppress_flips},
          {"suppress_rate", r.suppress_rate()},
          {"boost_eligible", r.boost_eligible},
          {"boost_flips", r.boost_flips},
          {"boost_rate", r.boost_rate()},
          {"rows", std::move(rows)}};
}

// method x mode grid, one CSV row per (method, mode) with the related and
// unrelated means and their ratio
struct PcrTable {
  struct Entry {
    std::string method;
    std::string mode;
    double related = 0.0, unrelated = 0.0, ratio = 0.0;
  };
  std::vector<Entry> entries;

  std::string to_csv() const {
    std::string out = "method,mode,related,unrelated,ratio\n";
    for (const auto& e : entries) {
      out += e.method + "," + e.mode + "," + format_double(e.related) + "," +
             format_double(e.unrelated) + "," + format_double(e.ratio) + "\n";
    }
    return out;
  }
};

struct EditTable {
  struct Entry {
    std::string method;
    double boost_rate = 0.0, suppress_rate = 0.0;
    int boost_eligible = 0, suppress_eligible = 0;
  };
  std::vector<Entry> entries;

  std::string to_csv() const {
    std::string out = "method,boost_rate,suppress_rate,boost_eligible,suppress_eligible\n";
    for (const auto& e : entries) {
      out += e.method + "," + format_double(e.boost_rate) + "," +
             format_double(e.suppress_rate) + "," + std::to_string(e.boost_eligible) +
             "," + std::to_string(e.suppress_eligible) + "\n";
    }
    return out;
  }
};

}  // namespace qrn
