// Option-space prediction for multi-choice queries.
//
// Each prompt instance has its own option permutation, so per-instance
// letter probabilities are mapped back to canonical options before
// aggregating across the query's prompts.
#pragma once

#include <array>

#include "qrn/corpus.hpp"
#include "qrn/model.hpp"

namespace qrn {

// Mean probability per canonical option over the query's prompts, under an
// optional intervention.
inline std::array<double, 4> option_probs(const GluTransformer& model,
                                          const MultiChoiceQuery& q,
                                          const InterventionSpec* spec = nullptr) {
  require(!q.prompts.empty(), "query ", q.id, " has no rendered prompts");
  std::array<double, 4> acc = {0, 0, 0, 0};
  for (const auto& p : q.prompts) {
    require(!p.token_ids.empty(), "query ", q.id, " prompts not tokenized");
    ForwardTrace trace;
    if (spec == nullptr) {
      trace = forward(model, p.token_ids);
    } else {
      const ForwardTrace clean = forward(model, p.token_ids);
      trace = forward_with_override(model, p.token_ids, *spec, &clean);
    }
    const auto logits = trace.logits.row(trace.pred_pos);
    for (int slot = 0; slot < 4; ++slot) {
      const int option = p.option_perm[static_cast<std::size_t>(slot)];
      acc[static_cast<std::size_t>(option)] += prob_from_logits(logits, slot);
    }
  }
  for (double& v : acc) v /= static_cast<double>(q.prompts.size());
  return acc;
}

// argmax over the four option-letter probabilities, in canonical option space
inline int predict_option(const GluTransformer& model, const MultiChoiceQuery& q,
                          const InterventionSpec* spec = nullptr) {
  const auto probs = option_probs(model, q, spec);
  int best = 0;
  for (int k = 1; k < 4; ++k)
    if (probs[static_cast<std::size_t>(k)] > probs[static_cast<std::size_t>(best)]) best = k;
  return best;
}

}  // namespace qrn
