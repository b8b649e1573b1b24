// Synthetic fact generation, the multi-choice proxy task, and dataset IO.
//
// A free-form fact (subject, relation, object) becomes a four-option
// multiple-choice query: three distractors are sampled from the same
// domain's answer pool, the options are shuffled, and each of the |Q|
// prompt templates renders its own instantiation. With per-template
// shuffling on, every instantiation reshuffles the options so the correct
// letter varies across templates.
#pragma once

#include <array>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "qrn/tokenizer.hpp"
#include "qrn/util.hpp"

namespace qrn {

struct Fact {
  std::string id;
  std::string subject;
  std::string relation;
  std::string object;  // the correct answer
  std::string domain;
  std::string language = "en";
};

struct PromptInstance {
  std::string rendered_text;
  std::vector<int> token_ids;  // empty until bound to a tokenizer
  int answer_token = -1;       // option-letter token id of the correct answer
  int template_id = 0;
  // slot -> canonical option index under this instance's shuffle
  std::array<int, 4> option_perm = {0, 1, 2, 3};
};

struct MultiChoiceQuery {
  std::string id;
  std::string domain;
  std::string question;
  std::array<std::string, 4> options;
  int correct_index = 0;
  std::uint64_t shuffle_seed = 0;
  std::vector<PromptInstance> prompts;

  const std::string& correct_text() const {
    return options[static_cast<std::size_t>(correct_index)];
  }
};

// Prompt templates, one per line, with {Question} and {A}..{D} placeholders.
struct TemplateSet {
  std::vector<std::string> templates;

  static TemplateSet defaults() {
    return TemplateSet{{
        "Answer with the letter of the correct option . "
        "Question : {Question} A . {A} B . {B} C . {C} D . {D} Response :",
        "Choose the letter of the right answer . "
        "Question : {Question} A . {A} B . {B} C . {C} D . {D} Response :",
        "Pick the option letter that fits best . "
        "Question : {Question} A . {A} B . {B} C . {C} D . {D} Response :",
    }};
  }

  static TemplateSet parse(const std::string& text) {
    TemplateSet set;
    std::string line;
    std::istringstream in(text);
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      for (const char* ph : {"{Question}", "{A}", "{B}", "{C}", "{D}"})
        require(line.find(ph) != std::string::npos,
                "template missing placeholder ", ph, ": ", line);
      set.templates.push_back(line);
    }
    require(!set.templates.empty(), "template file contains no templates");
    return set;
  }

  static TemplateSet load(const std::string& path) { return parse(read_file(path)); }

  void save(const std::string& path) const {
    std::string text;
    for (const auto& t : templates) text += t + "\n";
    write_file(path, text);
  }

  int count() const { return static_cast<int>(templates.size()); }

  std::string render(int template_id, const std::string& question,
                     const std::array<std::string, 4>& slot_texts) const {
    require(template_id >= 0 && template_id < count(), "template id out of range");
    std::string out = templates[static_cast<std::size_t>(template_id)];
    auto replace_all = [&out](const std::string& ph, const std::string& val) {
      for (std::size_t at = out.find(ph); at != std::string::npos; at = out.find(ph, at))
        out.replace(at, ph.size(), val), at += val.size();
    };
    replace_all("{Question}", question);
    replace_all("{A}", slot_texts[0]);
    replace_all("{B}", slot_texts[1]);
    replace_all("{C}", slot_texts[2]);
    replace_all("{D}", slot_texts[3]);
    return out;
  }
};

struct RenderOptions {
  // When false, all templates of a query share one option permutation
  // (used by the planted-knowledge pipeline, which needs a fixed correct
  // letter per fact).
  bool per_template_shuffle = true;
};

namespace detail {

inline const std::vector<std::pair<std::string, std::string>>& relation_patterns() {
  static const std::vector<std::pair<std::string, std::string>> kPatterns = {
      {"birth_place", "Where was {S} born ?"},
      {"employer", "Who is the employer of {S} ?"},
      {"instrument", "Which instrument does {S} play ?"},
      {"headquarters_location", "Where is the headquarters of {S} ?"},
      {"host_country", "Which country hosted the {S} event ?"},
  };
  return kPatterns;
}

inline std::string pseudo_word(Rng& rng, int syllables, bool capitalize) {
  static const char* kCons = "bcdfghjklmnprstvwz";
  static const char* kVow = "aeiou";
  std::string w;
  for (int s = 0; s < syllables; ++s) {
    w += kCons[rng.next_below(18)];
    w += kVow[rng.next_below(5)];
  }
  if (capitalize) w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
  return w;
}

inline std::string unique_pseudo_word(Rng& rng, int syllables, bool capitalize,
                                      std::set<std::string>& used) {
  for (int attempt = 0; attempt < 10000; ++attempt) {
    std::string w = pseudo_word(rng, syllables, capitalize);
    if (used.insert(w).second) return w;
  }
  fail("pseudo-word space exhausted");
}

}  // namespace detail

inline std::string question_for(const Fact& fact) {
  for (const auto& [tag, pattern] : detail::relation_patterns()) {
    if (tag != fact.relation) continue;
    std::string q = pattern;
    const auto at = q.find("{S}");
    q.replace(at, 3, fact.subject);
    return q;
  }
  fail("unknown relation tag: ", fact.relation);
}

// Deterministic synthetic facts. Subjects and objects are globally unique
// pseudo-words, so each domain's answer vocabulary is disjoint from every
// other domain's and distractor sampling stays in-domain.
inline std::vector<Fact> generate_synthetic_facts(int n,
                                                  const std::vector<std::string>& domains,
                                                  std::uint64_t seed) {
  require(n >= 1, "fact count must be >= 1");
  require(!domains.empty(), "domain list must not be empty");
  Rng rng(derive_seed(seed, "facts"));
  std::set<std::string> used;
  const auto& patterns = detail::relation_patterns();
  std::vector<Fact> facts;
  facts.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Fact f;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "f%04d", i);
    f.id = buf;
    f.domain = domains[static_cast<std::size_t>(i) % domains.size()];
    f.relation = patterns[rng.next_below(patterns.size())].first;
    f.subject = detail::unique_pseudo_word(rng, 3, true, used);
    f.object = detail::unique_pseudo_word(rng, 2 + static_cast<int>(rng.next_below(2)), true, used);
    f.language = "en";
    facts.push_back(std::move(f));
  }
  return facts;
}

// Fills prompts from the canonical option order. Option slots are
// A,B,C,D; each template's permutation maps slot -> canonical option index.
inline void render_prompts(MultiChoiceQuery& q, const TemplateSet& templates,
                           const RenderOptions& opts = {},
                           const Tokenizer* tokenizer = nullptr) {
  q.prompts.clear();
  for (int t = 0; t < templates.count(); ++t) {
    std::array<int, 4> perm = {0, 1, 2, 3};
    if (opts.per_template_shuffle) {
      Rng rng(derive_seed(q.shuffle_seed, "perm", static_cast<std::uint64_t>(t)));
      std::vector<int> p = {0, 1, 2, 3};
      rng.shuffle(p);
      std::copy(p.begin(), p.end(), perm.begin());
    }
    std::array<std::string, 4> slot_texts;
    int answer_slot = -1;
    for (int slot = 0; slot < 4; ++slot) {
      slot_texts[static_cast<std::size_t>(slot)] =
          q.options[static_cast<std::size_t>(perm[static_cast<std::size_t>(slot)])];
      if (perm[static_cast<std::size_t>(slot)] == q.correct_index) answer_slot = slot;
    }
    PromptInstance inst;
    inst.template_id = t;
    inst.rendered_text = templates.render(t, q.question, slot_texts);
    inst.answer_token = Tokenizer::option_letter_id(answer_slot);
    inst.option_perm = perm;
    if (tokenizer != nullptr) inst.token_ids = tokenizer->encode(inst.rendered_text);
    q.prompts.push_back(std::move(inst));
  }
}

// Builds the multi-choice proxy query for one fact: 3 same-domain
// distractors sampled without replacement, canonical option order shuffled
// by the seed, one prompt per template.
inline MultiChoiceQuery to_multichoice(const Fact& fact,
                                       const std::vector<Fact>& distractor_pool,
                                       const TemplateSet& templates,
                                       std::uint64_t seed,
                                       const RenderOptions& opts = {},
                                       const Tokenizer* tokenizer = nullptr) {
  std::vector<const Fact*> candidates;
  std::set<std::string> seen = {fact.object};
  for (const auto& c : distractor_pool) {
    if (c.domain != fact.domain) continue;
    if (!seen.insert(c.object).second) continue;  // exact-string inequality
    candidates.push_back(&c);
  }
  require(candidates.size() >= 3,
          "need at least 3 same-domain facts with distinct objects for ", fact.id,
          " (have ", candidates.size(), ")");

  Rng rng(derive_seed(seed, "options"));
  std::vector<std::string> opts4 = {fact.object};
  for (int k = 0; k < 3; ++k) {
    const std::size_t pick = rng.next_below(candidates.size());
    opts4.push_back(candidates[pick]->object);
    candidates.erase(candidates.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  rng.shuffle(opts4);

  MultiChoiceQuery q;
  q.id = fact.id.empty() ? "q" : ("q" + fact.id.substr(1));
  q.domain = fact.domain;
  q.question = question_for(fact);
  q.shuffle_seed = seed;
  for (int i = 0; i < 4; ++i) {
    q.options[static_cast<std::size_t>(i)] = opts4[static_cast<std::size_t>(i)];
    if (opts4[static_cast<std::size_t>(i)] == fact.object) q.correct_index = i;
  }
  render_prompts(q, templates, opts, tokenizer);
  return q;
}

// All words any rendering of these queries can produce, independent of the
// option permutations. Vocabulary is therefore a pure function of the
// dataset and template text.
inline Tokenizer build_tokenizer(const std::vector<MultiChoiceQuery>& queries,
                                 const TemplateSet& templates) {
  std::vector<std::string> words;
  for (const auto& t : templates.templates)
    for (const auto& w : split_words(t)) words.push_back(w);
  for (const auto& q : queries) {
    for (const auto& w : split_words(q.question)) words.push_back(w);
    for (const auto& o : q.options)
      for (const auto& w : split_words(o)) words.push_back(w);
  }
  // strip placeholder fragments left by template text
  std::erase_if(words, [](const std::string& w) {
    return w.find('{') != std::string::npos || w.find('}') != std::string::npos;
  });
  return Tokenizer::from_words(words);
}

// ---- dataset JSON: [{id, domain, question, options:[4], answer:"A".."D"}] ----

inline void save_dataset(const std::vector<MultiChoiceQuery>& queries,
                         const std::string& path) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& q : queries) {
    nlohmann::json item;
    item["id"] = q.id;
    item["domain"] = q.domain;
    item["question"] = q.question;
    item["options"] = q.options;
    item["answer"] = std::string(1, static_cast<char>('A' + q.correct_index));
    arr.push_back(std::move(item));
  }
  write_file(path, arr.dump(2) + "\n");
}

// Prompts are not persisted; call render_prompts after loading.
inline std::vector<MultiChoiceQuery> load_dataset(const std::string& path) {
  nlohmann::json arr;
  try {
    arr = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    fail("dataset ", path, ": JSON parse error: ", e.what());
  }
  require(arr.is_array(), "dataset ", path, ": top level must be an array");
  std::vector<MultiChoiceQuery> out;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto& item = arr[i];
    auto ctx = [&]() {
      return item.contains("id") && item["id"].is_string()
                 ? "query '" + item["id"].get<std::string>() + "'"
                 : "query #" + std::to_string(i);
    };
    require(item.is_object(), "dataset ", path, ": entry #", i, " is not an object");
    for (const char* field : {"id", "domain", "question", "options", "answer"})
      require(item.contains(field), "dataset ", path, ": ", ctx(),
              " missing field '", field, "'");
    MultiChoiceQuery q;
    q.id = item["id"].get<std::string>();
    require(ids.insert(q.id).second, "dataset ", path, ": duplicate query id '", q.id, "'");
    q.domain = item["domain"].get<std::string>();
    q.question = item["question"].get<std::string>();
    const auto& opts = item["options"];
    require(opts.is_array() && opts.size() == 4, "dataset ", path, ": ", ctx(),
            " must have exactly 4 options (has ", opts.size(), ")");
    std::set<std::string> distinct;
    for (int k = 0; k < 4; ++k) {
      q.options[static_cast<std::size_t>(k)] = opts[static_cast<std::size_t>(k)].get<std::string>();
      require(distinct.insert(q.options[static_cast<std::size_t>(k)]).second, "dataset ",
              path, ": ", ctx(), " has duplicate option text");
    }
    const std::string ans = item["answer"].get<std::string>();
    require(ans.size() == 1 && ans[0] >= 'A' && ans[0] <= 'D', "dataset ", path,
            ": ", ctx(), " answer must be one of A..D (got '", ans, "')");
    q.correct_index = ans[0] - 'A';
    out.push_back(std::move(q));
  }
  return out;
}

inline void save_facts(const std::vector<Fact>& facts, const std::string& path) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& f : facts) {
    nlohmann::json item;
    item["id"] = f.id;
    item["subject"] = f.subject;
    item["relation"] = f.relation;
    item["object"] = f.object;
    item["domain"] = f.domain;
    item["language"] = f.language;
    arr.push_back(std::move(item));
  }
  write_file(path, arr.dump(2) + "\n");
}

inline std::vector<Fact> load_facts(const std::string& path) {
  nlohmann::json arr = nlohmann::json::parse(read_file(path));
  require(arr.is_array(), "facts ", path, ": top level must be an array");
  std::vector<Fact> out;
  for (const auto& item : arr) {
    Fact f;
    f.id = item.at("id").get<std::string>();
    f.subject = item.at("subject").get<std::string>();
    f.relation = item.at("relation").get<std::string>();
    f.object = item.at("object").get<std::string>();
    f.domain = item.at("domain").get<std::string>();
    f.language = item.value("language", "en");
    out.push_back(std::move(f));
  }
  return out;
}

// Deterministic disjoint split by shuffled index; first portion has
// round(frac * n) queries.
inline std::pair<std::vector<MultiChoiceQuery>, std::vector<MultiChoiceQuery>>
split_queries(const std::vector<MultiChoiceQuery>& queries, double frac,
              std::uint64_t seed) {
  std::vector<std::size_t> order(queries.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed, "split"));
  rng.shuffle(order);
  const auto cut = static_cast<std::size_t>(
      std::llround(frac * static_cast<double>(queries.size())));
  std::vector<MultiChoiceQuery> a, b;
  for (std::size_t i = 0; i < order.size(); ++i)
    (i < cut ? a : b).push_back(queries[order[i]]);
  auto by_id = [](const MultiChoiceQuery& x, const MultiChoiceQuery& y) {
    return x.id < y.id;
  };
  std::sort(a.begin(), a.end(), by_id);
  std::sort(b.begin(), b.end(), by_id);
  return {std::move(a), std::move(b)};
}

}  // namespace qrn
