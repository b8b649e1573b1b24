// Shared test fixture: a small planted-knowledge setup built once per
// process and reused across test cases.
#pragma once

#include <memory>
#include <vector>

#include "qrn/corpus.hpp"
#include "qrn/plant.hpp"

namespace qrn_test {

struct PlantedSetup {
  qrn::ModelConfig config;
  std::vector<qrn::Fact> facts;
  std::vector<qrn::MultiChoiceQuery> queries;
  qrn::TemplateSet templates;
  qrn::Tokenizer tokenizer;
  qrn::PlantSpec spec;
  qrn::GluTransformer model;
};

inline PlantedSetup build_planted_setup(int n_facts, std::uint64_t seed,
                                        int d_model = 64, int ffn_dim = 128,
                                        int num_layers = 4) {
  using namespace qrn;
  PlantedSetup s;
  s.templates = TemplateSet::defaults();
  const std::vector<std::string> all_domains = {"bio", "phys", "chem",
                                                "math", "cs",   "geo"};
  // each domain needs at least 4 facts for distractor sampling
  const int n_domains = std::clamp(n_facts / 8, 1, 6);
  std::vector<std::string> domains(all_domains.begin(),
                                   all_domains.begin() + n_domains);
  s.facts = generate_synthetic_facts(n_facts, domains, seed);

  s.config.num_layers = num_layers;
  s.config.d_model = d_model;
  s.config.ffn_dim = ffn_dim;
  s.config.num_heads = 4;
  s.config.max_seq_len = 64;
  s.config.rng_seed = derive_seed(seed, "plant-model");

  s.spec = make_plant_spec(s.facts, s.config, seed);

  const RenderOptions opts{.per_template_shuffle = false};
  for (std::size_t i = 0; i < s.facts.size(); ++i) {
    MultiChoiceQuery q = to_multichoice(s.facts[i], s.facts, s.templates,
                                        derive_seed(seed, "query", i), opts);
    force_correct_slot(q, s.spec.facts[i].correct_slot, s.templates, opts);
    s.queries.push_back(std::move(q));
  }
  s.tokenizer = build_tokenizer(s.queries, s.templates);
  s.config.vocab_size = s.tokenizer.size();
  for (auto& q : s.queries) render_prompts(q, s.templates, opts, &s.tokenizer);

  s.model = plant_model(s.config, s.spec, s.queries, s.tokenizer);
  return s;
}

// 50-fact setup shared by the heavier suites
inline const PlantedSetup& planted50() {
  static const PlantedSetup s = build_planted_setup(50, 20240901);
  return s;
}

}  // namespace qrn_test
