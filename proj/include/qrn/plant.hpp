// Planted-knowledge models: constructed transformers whose designated
// neurons provably gate specific facts, used as ground truth for
// attribution recovery and intervention experiments.
//
// Construction sketch. The embedding space reserves one axis per fact
// (carried only by that fact's detector token), four option-letter axes,
// and an always-on bias axis; attention is uniform (Wq = Wk = 0,
// Wv = Wo = I), so every layer mean-pools the stream and the final
// position sees which detector tokens are present. The planted neuron for
// fact j reads axis j through Wu, opens its gate through the bias axis,
// and writes logit mass along the unembedding direction of the fact's
// fixed correct letter. A handful of always-on "common" neurons read the
// bias axis and write near-uniform mass over all four letters with a mild
// tilt toward D, giving every query the same letter prior; they recur in
// every cluster, which is exactly the behavior common-neuron detection is
// meant to catch. Weak facts get a letter write too small to beat the D
// prior, so the model answers them incorrectly until the neuron is
// boosted. All remaining FFN weights are low-amplitude noise.
//
// Per-fact read gains are calibrated against the fact's actual prompts, so
// planted pre-gate activations hit a uniform target level.
#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "qrn/corpus.hpp"
#include "qrn/model.hpp"
#include "qrn/predict.hpp"
#include "qrn/tokenizer.hpp"
#include "qrn/util.hpp"

namespace qrn {

struct PlantedFact {
  std::string fact_id;
  NeuronId neuron;
  std::string detector_word;  // question token whose presence fires the neuron
  int correct_slot = 0;       // fixed option slot (0..2; D is the prior letter)
  bool weak = false;          // answered incorrectly until boosted
};

struct PlantSpec {
  std::vector<PlantedFact> facts;
  std::vector<NeuronId> common_neurons;
  double gate_strength = 3.0;
};

struct PlantParams {
  double detector_embed = 8.0;
  double bias_embed = 1.0;
  double shared_embed_std = 0.25;
  double unembed_noise_std = 0.3;
  double ffn_noise_std = 0.0;  // resolved from gate_strength when 0
  double unembed_gain = 8.0;
  double detector_attn_score = 4.5;  // logit for attending detector positions

  // letter-logit targets
  double common_letter_total = 6.0;  // aggregate D-prior logit W
  double common_profile_q = 0.88;    // A,B,C mass relative to D
  double delta_strong = 1.8;         // planted letter logit, strong facts
  double delta_weak = 0.46;          // below the (1-q) W prior gap; 2x clears it
  double gate_pre_target = 3.0;      // g = silu(3)
  double gate_closed_depth = 8.0;    // shut-gate preactivation is -depth

  int common_count = 5;
  double weak_fraction = 0.24;
};

namespace detail {

struct PlantAxes {
  int n_facts = 0;
  int letter0 = 0;
  int bias = 0;
  int cue = 0;  // carried by the prompt-final ":" token
  int shared0 = 0;

  static PlantAxes layout(const ModelConfig& cfg, int n_facts) {
    require(cfg.d_model >= n_facts + 7,
            "d_model must be at least n_facts + 7 for the planted layout (",
            cfg.d_model, " < ", n_facts + 7, ")");
    PlantAxes a;
    a.n_facts = n_facts;
    a.letter0 = n_facts;
    a.bias = n_facts + 4;
    a.cue = n_facts + 5;
    a.shared0 = n_facts + 6;
    return a;
  }

  int fact_axis(int j) const { return j; }
  int letter_axis(int letter) const { return letter0 + letter; }
};

}  // namespace detail

// Assigns planted neurons (one per fact, all in a middle layer), common
// neurons (top layer), fixed correct slots in {A,B,C}, and the weak subset.
inline PlantSpec make_plant_spec(const std::vector<Fact>& facts,
                                 const ModelConfig& cfg, std::uint64_t seed,
                                 const PlantParams& params = {}) {
  require(!facts.empty(), "no facts to plant");
  require(cfg.num_layers >= 3, "planted models need at least 3 layers");
  const int n = static_cast<int>(facts.size());
  require(cfg.ffn_dim >= n && cfg.ffn_dim >= params.common_count,
          "ffn_dim too small for ", n, " planted facts");

  PlantSpec spec;
  Rng rng(derive_seed(seed, "plant-spec"));

  const int planted_layer = cfg.num_layers / 2 - 1 + (cfg.num_layers % 2);
  std::vector<int> indices(static_cast<std::size_t>(cfg.ffn_dim));
  for (int i = 0; i < cfg.ffn_dim; ++i) indices[static_cast<std::size_t>(i)] = i;
  rng.shuffle(indices);

  std::vector<int> weak_order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) weak_order[static_cast<std::size_t>(i)] = i;
  rng.shuffle(weak_order);
  const int n_weak = static_cast<int>(params.weak_fraction * n);
  std::vector<bool> weak(static_cast<std::size_t>(n), false);
  for (int i = 0; i < n_weak; ++i) weak[static_cast<std::size_t>(weak_order[static_cast<std::size_t>(i)])] = true;

  std::set<std::string> detectors;
  for (int j = 0; j < n; ++j) {
    PlantedFact pf;
    pf.fact_id = facts[static_cast<std::size_t>(j)].id;
    pf.neuron = NeuronId{planted_layer, indices[static_cast<std::size_t>(j)]};
    pf.detector_word = facts[static_cast<std::size_t>(j)].subject;
    require(detectors.insert(pf.detector_word).second,
            "detector-token collision between facts: ", pf.detector_word);
    pf.correct_slot = rng.next_int(0, 3);  // A..C; D carries the prior
    pf.weak = weak[static_cast<std::size_t>(j)];
    spec.facts.push_back(std::move(pf));
  }

  std::vector<int> top_indices(static_cast<std::size_t>(cfg.ffn_dim));
  for (int i = 0; i < cfg.ffn_dim; ++i) top_indices[static_cast<std::size_t>(i)] = i;
  rng.shuffle(top_indices);
  for (int c = 0; c < params.common_count; ++c)
    spec.common_neurons.push_back(NeuronId{cfg.num_layers - 1, top_indices[static_cast<std::size_t>(c)]});
  return spec;
}

// Rearranges a query's canonical options so the correct answer sits at
// `slot`, then re-renders. The planted pipeline uses a shared permutation
// across templates, so the correct letter is fixed per fact.
inline void force_correct_slot(MultiChoiceQuery& q, int slot,
                               const TemplateSet& templates,
                               const RenderOptions& opts,
                               const Tokenizer* tokenizer = nullptr) {
  require(slot >= 0 && slot < 4, "option slot out of range");
  std::swap(q.options[static_cast<std::size_t>(q.correct_index)],
            q.options[static_cast<std::size_t>(slot)]);
  q.correct_index = slot;
  render_prompts(q, templates, opts, tokenizer);
}

// Builds the planted transformer. `queries` must be the rendered, tokenized
// planted queries, index-aligned with spec.facts; they are probed to
// calibrate read gains against actual prompt statistics.
inline GluTransformer plant_model(const ModelConfig& cfg, const PlantSpec& spec,
                                  const std::vector<MultiChoiceQuery>& queries,
                                  const Tokenizer& tokenizer,
                                  const PlantParams& params = {}) {
  cfg.validate();
  require(spec.gate_strength > 0.0, "gate_strength must be positive");
  require(queries.size() == spec.facts.size(),
          "planted queries must align with spec facts");
  const int n = static_cast<int>(spec.facts.size());
  const auto axes = detail::PlantAxes::layout(cfg, n);
  require(cfg.vocab_size == tokenizer.size(), "config vocab disagrees with tokenizer");

  std::set<NeuronId> taken;
  for (const auto& pf : spec.facts) {
    require(pf.neuron.layer >= 0 && pf.neuron.layer < cfg.num_layers - 1,
            "planted layers must be below the final layer");
    require(pf.neuron.index >= 0 && pf.neuron.index < cfg.ffn_dim,
            "planted neuron index out of range");
    require(taken.insert(pf.neuron).second, "planted neurons must be distinct");
  }
  for (const auto& c : spec.common_neurons)
    require(taken.insert(c).second, "common neuron collides with a planted neuron");

  GluTransformer m = GluTransformer::zeros(cfg);
  Rng rng(derive_seed(cfg.rng_seed, "plant-weights"));
  const double noise =
      params.ffn_noise_std > 0.0 ? params.ffn_noise_std : 1e-2 * spec.gate_strength;

  // embeddings: bias axis on every token, detector axes on detector tokens,
  // shared-subspace noise elsewhere
  std::map<int, int> detector_axis;  // token id -> fact axis
  for (int j = 0; j < n; ++j) {
    const int tok = tokenizer.id_of(spec.facts[static_cast<std::size_t>(j)].detector_word);
    require(detector_axis.emplace(tok, axes.fact_axis(j)).second,
            "detector token reused across facts");
  }
  const int cue_token = tokenizer.id_of(":");
  for (int t = 0; t < cfg.vocab_size; ++t) {
    auto row = m.tok_embed.row(t);
    row[static_cast<std::size_t>(axes.bias)] = params.bias_embed;
    for (int s = axes.shared0; s < cfg.d_model; ++s)
      row[static_cast<std::size_t>(s)] = rng.next_normal() * params.shared_embed_std;
    if (auto it = detector_axis.find(t); it != detector_axis.end())
      row[static_cast<std::size_t>(it->second)] = params.detector_embed;
    if (t == cue_token) row[static_cast<std::size_t>(axes.cue)] = params.detector_embed;
  }

  // uniform attention everywhere: scores zero, values passed through
  for (auto& L : m.layers) {
    for (int e = 0; e < cfg.d_model; ++e) {
      L.wv.at(e, e) = 1.0;
      L.wo.at(e, e) = 1.0;
    }
    for (double& v : L.w_up.data) v = rng.next_normal() * noise;
    for (double& v : L.w_gate.data) v = rng.next_normal() * noise;
    for (double& v : L.w_down.data) v = rng.next_normal() * noise;
    // background writes stay off the letter, cue, and bias axes: letter
    // logits belong to the planted circuitry alone, and the gate axes must
    // not drift
    for (int i = 0; i < cfg.ffn_dim; ++i) {
      for (int letter = 0; letter < 4; ++letter)
        L.w_down.at(i, axes.letter_axis(letter)) = 0.0;
      L.w_down.at(i, axes.cue) = 0.0;
      L.w_down.at(i, axes.bias) = 0.0;
    }
  }

  // unembedding: exact letter axes for letter tokens, shared-subspace noise
  // for everything else
  for (int t = 0; t < cfg.vocab_size; ++t) {
    if (t < 4) {
      m.unembed.at(axes.letter_axis(t), t) = params.unembed_gain;
      continue;
    }
    for (int s = axes.shared0; s < cfg.d_model; ++s)
      m.unembed.at(s, t) = rng.next_normal() * params.unembed_noise_std;
  }

  // ---- probe A: pre-attention levels at the planted layer ----
  // Quantifies the query (bias axis, final position) and key (detector
  // axis, detector position) magnitudes so the detector-attention score
  // lands at its target logit.
  const int planted_layer = spec.facts.front().neuron.layer;
  {
    double bias_xa = 0.0, det_xa = 0.0;
    int probes = 0;
    for (int j = 0; j < n; ++j) {
      const auto& q = queries[static_cast<std::size_t>(j)];
      require(!q.prompts.empty() && !q.prompts.front().token_ids.empty(),
              "planted queries must be rendered and tokenized");
      const int det_tok =
          tokenizer.id_of(spec.facts[static_cast<std::size_t>(j)].detector_word);
      for (const auto& p : q.prompts) {
        const Activations acts = forward_acts(m, p.token_ids, nullptr, false);
        const auto& L = acts.layers[static_cast<std::size_t>(planted_layer)];
        bias_xa += L.xa_norm.at(acts.pred_pos, axes.bias);
        int det_pos = -1;
        for (std::size_t t = 0; t < p.token_ids.size(); ++t)
          if (p.token_ids[t] == det_tok) det_pos = static_cast<int>(t);
        require(det_pos >= 0, "detector token missing from prompt of ",
                spec.facts[static_cast<std::size_t>(j)].fact_id);
        det_xa += L.xa_norm.at(det_pos, axes.fact_axis(j));
        ++probes;
      }
    }
    bias_xa /= probes;
    det_xa /= probes;
    require(bias_xa > 0.05 && det_xa > 0.05, "probe levels degenerate");

    // detector attention at the planted layer: queries read the bias axis,
    // keys read the detector axes, one score dimension per head
    const double gain = std::sqrt(params.detector_attn_score *
                                  std::sqrt(static_cast<double>(cfg.head_dim())) /
                                  (bias_xa * det_xa));
    auto& L = m.layers[static_cast<std::size_t>(planted_layer)];
    for (int h = 0; h < cfg.num_heads; ++h) {
      const int dim0 = h * cfg.head_dim();
      L.wq.at(axes.bias, dim0) = gain;
      for (int j = 0; j < n; ++j) L.wk.at(axes.fact_axis(j), dim0) = gain;
    }
  }

  // ---- probe B: FFN input levels with the final attention in place ----
  double cue_planted_layer = 0.0, bias_planted_layer = 0.0, r_final = 0.0;
  std::map<int, double> bias_common_layer;
  for (const auto& c : spec.common_neurons) bias_common_layer[c.layer] = 0.0;
  std::vector<double> det_level(static_cast<std::size_t>(n), 0.0);
  int n_probes = 0;
  for (int j = 0; j < n; ++j) {
    const auto& q = queries[static_cast<std::size_t>(j)];
    for (const auto& p : q.prompts) {
      const Activations acts = forward_acts(m, p.token_ids, nullptr, false);
      const int pos = acts.pred_pos;
      det_level[static_cast<std::size_t>(j)] +=
          acts.layers[static_cast<std::size_t>(planted_layer)].h_norm.at(
              pos, axes.fact_axis(j));
      cue_planted_layer +=
          acts.layers[static_cast<std::size_t>(planted_layer)].h_norm.at(pos, axes.cue);
      bias_planted_layer +=
          acts.layers[static_cast<std::size_t>(planted_layer)].h_norm.at(pos, axes.bias);
      for (auto& [layer, v] : bias_common_layer)
        v += acts.layers[static_cast<std::size_t>(layer)].h_norm.at(pos, axes.bias);
      r_final += rms(acts.x_final.row(pos), kRmsEps);
      ++n_probes;
    }
    det_level[static_cast<std::size_t>(j)] /=
        static_cast<double>(q.prompts.size());
  }
  cue_planted_layer /= n_probes;
  bias_planted_layer /= n_probes;
  r_final /= n_probes;
  for (auto& [layer, v] : bias_common_layer) v /= n_probes;
  require(cue_planted_layer > 0.1, "cue axis level degenerate at planted layer");
  require(bias_planted_layer > 0.1, "bias axis level degenerate at planted layer");

  // ---- wire the planted neurons ----
  const double f_target = 2.0 * spec.gate_strength;
  const double g_value = silu(params.gate_pre_target);
  for (int j = 0; j < n; ++j) {
    const auto& pf = spec.facts[static_cast<std::size_t>(j)];
    require(det_level[static_cast<std::size_t>(j)] > 1e-6,
            "detector level vanished for fact ", pf.fact_id);
    auto& L = m.layers[static_cast<std::size_t>(pf.neuron.layer)];
    for (int e = 0; e < cfg.d_model; ++e) {
      L.w_up.at(e, pf.neuron.index) = 0.0;
      L.w_gate.at(e, pf.neuron.index) = 0.0;
      L.w_down.at(pf.neuron.index, e) = 0.0;
    }
    L.w_up.at(axes.fact_axis(j), pf.neuron.index) =
        f_target / det_level[static_cast<std::size_t>(j)];
    // AND-gate on detector and cue: (T+D) + (T+D) - (T+2D) = T when both
    // are present, -D when either is missing. The cue rides only the
    // prompt-final ":" position, so the write lands at the prediction
    // position of the neuron's own fact. D sits deep in SiLU's tail: a
    // shut gate must also silence the W_down-alignment gradients of the
    // other facts' neurons, and silu(-D) ~ -D e^{-D} only vanishes for
    // large D.
    {
      const double T = params.gate_pre_target;
      const double D = params.gate_closed_depth;
      L.w_gate.at(axes.fact_axis(j), pf.neuron.index) =
          (T + D) / det_level[static_cast<std::size_t>(j)];
      L.w_gate.at(axes.cue, pf.neuron.index) = (T + D) / cue_planted_layer;
      L.w_gate.at(axes.bias, pf.neuron.index) = -(T + 2.0 * D) / bias_planted_layer;
    }
    const double delta = pf.weak ? params.delta_weak : params.delta_strong;
    const double write =
        delta * r_final / (params.unembed_gain * f_target * g_value);
    L.w_down.at(pf.neuron.index, axes.letter_axis(pf.correct_slot)) = write;
  }

  // ---- wire the common neurons: always-on letter prior, tilted to D ----
  const double f_common = 1.5 * f_target;
  for (const auto& c : spec.common_neurons) {
    auto& L = m.layers[static_cast<std::size_t>(c.layer)];
    const double bias_level = bias_common_layer.at(c.layer);
    require(bias_level > 0.1, "bias axis level degenerate at common layer");
    for (int e = 0; e < cfg.d_model; ++e) {
      L.w_up.at(e, c.index) = 0.0;
      L.w_gate.at(e, c.index) = 0.0;
      L.w_down.at(c.index, e) = 0.0;
    }
    L.w_up.at(axes.bias, c.index) = f_common / bias_level;
    L.w_gate.at(axes.bias, c.index) = params.gate_pre_target / bias_level;
    const double per_common = params.common_letter_total /
                              static_cast<double>(spec.common_neurons.size());
    for (int letter = 0; letter < 4; ++letter) {
      const double profile = (letter == 3) ? 1.0 : params.common_profile_q;
      L.w_down.at(c.index, axes.letter_axis(letter)) =
          profile * per_common * r_final /
          (params.unembed_gain * f_common * g_value);
    }
  }

  // ---- closed-loop write calibration ----
  // Writes below the top layer are re-amplified by the pooling attention of
  // the layers above, so nominal gains land off target. Measure each
  // write's effective letter-logit delta by suppressing its neurons and
  // rescale the W_down rows to hit the targets exactly.
  const auto letter_logit = [&](const std::vector<int>& toks, int letter,
                                const OverrideMap* ov) {
    const Activations acts = forward_acts(m, toks, ov, false);
    return acts.logits.at(acts.pred_pos, letter);
  };

  {  // commons first: aggregate D-prior
    OverrideMap ov;
    ov.per_layer.resize(static_cast<std::size_t>(cfg.num_layers));
    for (const auto& c : spec.common_neurons)
      ov.per_layer[static_cast<std::size_t>(c.layer)].emplace_back(c.index, 0.0);
    for (auto& l : ov.per_layer) std::sort(l.begin(), l.end());
    double w_eff = 0.0;
    int probes = 0;
    for (int j = 0; j < n; j += std::max(1, n / 8)) {
      const auto& toks = queries[static_cast<std::size_t>(j)].prompts.front().token_ids;
      w_eff += letter_logit(toks, 3, nullptr) - letter_logit(toks, 3, &ov);
      ++probes;
    }
    w_eff /= probes;
    require(w_eff > 0.05, "common letter prior failed to materialize");
    const double scale = params.common_letter_total / w_eff;
    for (const auto& c : spec.common_neurons) {
      auto row = m.layers[static_cast<std::size_t>(c.layer)].w_down.row(c.index);
      for (double& v : row) v *= scale;
    }
  }

  for (int j = 0; j < n; ++j) {  // then each planted write
    const auto& pf = spec.facts[static_cast<std::size_t>(j)];
    const int letter = pf.correct_slot;
    OverrideMap ov;
    ov.per_layer.resize(static_cast<std::size_t>(cfg.num_layers));
    ov.per_layer[static_cast<std::size_t>(pf.neuron.layer)].emplace_back(pf.neuron.index, 0.0);
    double d_eff = 0.0;
    const auto& q = queries[static_cast<std::size_t>(j)];
    for (const auto& p : q.prompts)
      d_eff += letter_logit(p.token_ids, letter, nullptr) -
               letter_logit(p.token_ids, letter, &ov);
    d_eff /= static_cast<double>(q.prompts.size());
    require(d_eff > 1e-6, "planted write failed to materialize for ", pf.fact_id);
    const double target = pf.weak ? params.delta_weak : params.delta_strong;
    auto row = m.layers[static_cast<std::size_t>(pf.neuron.layer)].w_down.row(pf.neuron.index);
    for (double& v : row) v *= target / d_eff;
  }
  return m;
}

struct PlantCheck {
  double min_separation = 0.0;  // min over facts of own-f / max other-f
  double min_own_f = 0.0;
  int strong_correct = 0, strong_total = 0;
  int weak_incorrect = 0, weak_total = 0;
  int suppress_flips = 0;  // strong facts flipped by suppressing the neuron
  int boost_flips = 0;     // weak facts flipped by boosting the neuron
};

// Measures the construction guarantees: activation separation, clean
// predictions, and single-neuron suppress/boost flips. Throws when a
// guarantee fails.
inline PlantCheck verify_plant(const GluTransformer& model, const PlantSpec& spec,
                               const std::vector<MultiChoiceQuery>& queries,
                               bool strict = true) {
  require(queries.size() == spec.facts.size(), "queries must align with spec facts");
  const int n = static_cast<int>(spec.facts.size());
  PlantCheck check;
  check.min_separation = 1e300;
  check.min_own_f = 1e300;

  // mean f̄ of each planted neuron on each fact's prompts
  Matrix fbar(n, n);  // fbar[fact][plant]
  for (int qi = 0; qi < n; ++qi) {
    for (const auto& p : queries[static_cast<std::size_t>(qi)].prompts) {
      const ForwardTrace t = forward(model, p.token_ids);
      for (int j = 0; j < n; ++j)
        fbar.at(qi, j) += t.f_at(spec.facts[static_cast<std::size_t>(j)].neuron) /
                          static_cast<double>(queries[static_cast<std::size_t>(qi)].prompts.size());
    }
  }
  for (int j = 0; j < n; ++j) {
    const double own = fbar.at(j, j);
    double max_other = 0.0;
    for (int qi = 0; qi < n; ++qi)
      if (qi != j) max_other = std::max(max_other, std::abs(fbar.at(qi, j)));
    check.min_own_f = std::min(check.min_own_f, own);
    const double sep = own / std::max(max_other, 1e-12);
    check.min_separation = std::min(check.min_separation, sep);
    if (strict) {
      require(own > spec.gate_strength, "planted activation below gate strength for ",
              spec.facts[static_cast<std::size_t>(j)].fact_id, " (", own, ")");
      require(sep >= 10.0, "planted separation below 10x for ",
              spec.facts[static_cast<std::size_t>(j)].fact_id, " (ratio ", sep, ")");
    }
  }

  for (int j = 0; j < n; ++j) {
    const auto& pf = spec.facts[static_cast<std::size_t>(j)];
    const auto& q = queries[static_cast<std::size_t>(j)];
    const int clean_pred = predict_option(model, q);
    InterventionSpec one;
    one.neurons = {pf.neuron};
    if (pf.weak) {
      ++check.weak_total;
      if (clean_pred != q.correct_index) ++check.weak_incorrect;
      one.mode = InterventionSpec::Mode::boost;
      if (predict_option(model, q, &one) == q.correct_index) ++check.boost_flips;
    } else {
      ++check.strong_total;
      if (clean_pred == q.correct_index) ++check.strong_correct;
      one.mode = InterventionSpec::Mode::suppress;
      if (predict_option(model, q, &one) != q.correct_index) ++check.suppress_flips;
    }
  }
  if (strict) {
    require(check.strong_correct == check.strong_total,
            "clean model must answer all strong facts (", check.strong_correct, "/",
            check.strong_total, ")");
    require(check.weak_incorrect == check.weak_total,
            "weak facts must start incorrect (", check.weak_incorrect, "/",
            check.weak_total, ")");
    require(check.suppress_flips == check.strong_total,
            "suppressing a planted neuron must flip its fact");
    require(check.boost_flips == check.weak_total,
            "boosting a weak planted neuron must flip its fact");
  }
  return check;
}

// ---- plant manifest: {fact_id -> {layer, index, ...}} plus common neurons ----

inline void save_plant_manifest(const PlantSpec& spec, const std::string& path) {
  nlohmann::json j;
  j["gate_strength"] = spec.gate_strength;
  nlohmann::json facts = nlohmann::json::object();
  for (const auto& pf : spec.facts) {
    facts[pf.fact_id] = {{"layer", pf.neuron.layer},
                         {"index", pf.neuron.index},
                         {"detector", pf.detector_word},
                         {"correct_letter", std::string(1, static_cast<char>('A' + pf.correct_slot))},
                         {"weak", pf.weak}};
  }
  j["facts"] = std::move(facts);
  nlohmann::json commons = nlohmann::json::array();
  for (const auto& c : spec.common_neurons)
    commons.push_back({{"layer", c.layer}, {"index", c.index}});
  j["common_neurons"] = std::move(commons);
  write_file(path, j.dump(2) + "\n");
}

inline PlantSpec load_plant_manifest(const std::string& path) {
  const nlohmann::json j = nlohmann::json::parse(read_file(path));
  PlantSpec spec;
  spec.gate_strength = j.at("gate_strength").get<double>();
  for (const auto& [fact_id, v] : j.at("facts").items()) {
    PlantedFact pf;
    pf.fact_id = fact_id;
    pf.neuron = NeuronId{v.at("layer").get<int>(), v.at("index").get<int>()};
    pf.detector_word = v.at("detector").get<std::string>();
    pf.correct_slot = v.at("correct_letter").get<std::string>()[0] - 'A';
    pf.weak = v.at("weak").get<bool>();
    spec.facts.push_back(std::move(pf));
  }
  std::sort(spec.facts.begin(), spec.facts.end(),
            [](const PlantedFact& a, const PlantedFact& b) { return a.fact_id < b.fact_id; });
  for (const auto& c : j.at("common_neurons"))
    spec.common_neurons.push_back(NeuronId{c.at("layer").get<int>(), c.at("index").get<int>()});
  return spec;
}

}  // namespace qrn
