// Run configuration and the command implementations behind the CLI:
// corpus generation, training, planting, neuron location, evaluation,
// editing, neuron-based prediction, and heatmap/overlap exports.
//
// Every command resolves its configuration, writes its outputs plus a
// manifest.json recording the resolved config and input hashes, and is
// deterministic for a fixed seed. Commands that consume locate outputs
// refuse to run when the checkpoint hash no longer matches the one the QR
// sets were built from.
#pragma once

#include <atomic>
#include <filesystem>
#include <iostream>
#include <thread>

#include <json.hpp>

#include "qrn/analysis.hpp"
#include "qrn/checkpoint.hpp"
#include "qrn/corpus.hpp"
#include "qrn/evaluation.hpp"
#include "qrn/plant.hpp"
#include "qrn/training.hpp"

namespace qrn {

struct RunConfig {
  // paths
  std::string corpus_path;
  std::string facts_path;
  std::string checkpoint_path;
  std::string templates_path;
  std::string qr_dir;  // locate output dir consumed by eval/edit/heatmap
  std::string out_dir = "out";

  // hyper-parameters; defaults follow the reference configuration
  int ig_steps = 16;
  double t_frac = 0.2;
  double u = 0.30;
  int v = 20;

  std::uint64_t seed = 0;
  int jobs = 1;
  bool force = false;

  // corpus generation
  int n_facts = 600;
  std::string domains = "bio,phys,chem,math,cs,geo";

  // model dimensions
  int num_layers = 2;
  int d_model = 48;
  int ffn_dim = 128;
  int num_heads = 4;
  int max_seq_len = 64;

  // training
  int epochs = 400;
  double learning_rate = 0.2;
  int batch_size = 12;
  double target_accuracy = 0.98;

  // planting
  int plant_facts = 50;
  double gate_strength = 3.0;

  // evaluation
  std::string methods = "qrnca,random,activation,kn_star,qrnca_wo_ica,qrnca_w_common";
  double predict_split = 0.75;

  // mode flags
  bool attribute_gate = false;   // d P / d g instead of d P / d f
  bool per_neuron_exact = false; // exact per-neuron IG path
  bool overlap_jaccard = false;  // Jaccard overlap normalization
  bool predict_absolute = false; // |gradient| sums in neuron-based prediction

  std::vector<std::string> domain_list() const {
    std::vector<std::string> out;
    std::string cur;
    for (char c : domains) {
      if (c == ',') {
        if (!cur.empty()) out.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
  }

  std::vector<std::string> method_list() const {
    std::vector<std::string> out;
    std::string cur;
    for (char c : methods) {
      if (c == ',') {
        if (!cur.empty()) out.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
  }

  SelectionParams selection_params() const {
    SelectionParams p;
    p.ig.ig_steps = ig_steps;
    p.ig.target = attribute_gate ? AttrTarget::gate_g : AttrTarget::pre_gate_f;
    p.ig.per_neuron_path = per_neuron_exact;
    p.t_frac = t_frac;
    p.u = u;
    p.v = v;
    return p;
  }

  nlohmann::json to_json() const {
    return {{"corpus", corpus_path},
            {"facts", facts_path},
            {"checkpoint", checkpoint_path},
            {"templates", templates_path},
            {"qr_dir", qr_dir},
            {"out_dir", out_dir},
            {"ig_steps", ig_steps},
            {"t_frac", t_frac},
            {"u", u},
            {"v", v},
            {"seed", seed},
            {"jobs", jobs},
            {"n_facts", n_facts},
            {"domains", domains},
            {"num_layers", num_layers},
            {"d_model", d_model},
            {"ffn_dim", ffn_dim},
            {"num_heads", num_heads},
            {"max_seq_len", max_seq_len},
            {"epochs", epochs},
            {"learning_rate", learning_rate},
            {"batch_size", batch_size},
            {"target_accuracy", target_accuracy},
            {"plant_facts", plant_facts},
            {"gate_strength", gate_strength},
            {"methods", methods},
            {"predict_split", predict_split},
            {"attribute_gate", attribute_gate},
            {"per_neuron_exact", per_neuron_exact},
            {"overlap_jaccard", overlap_jaccard},
            {"predict_absolute", predict_absolute}};
  }
};

// Plain key=value configuration text; '#' starts a comment line.
inline void apply_config_text(RunConfig& cfg, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, "config line ", lineno, ": expected key=value");
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    auto trim = [](std::string& s) {
      while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.erase(s.begin());
      while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
    };
    trim(key);
    trim(value);
    auto as_int = [&] { return std::stoi(value); };
    auto as_double = [&] { return std::stod(value); };
    auto as_bool = [&] {
      if (value == "true" || value == "1") return true;
      if (value == "false" || value == "0") return false;
      fail("config line ", lineno, ": boolean expected for ", key);
    };
    if (key == "corpus") cfg.corpus_path = value;
    else if (key == "facts") cfg.facts_path = value;
    else if (key == "checkpoint") cfg.checkpoint_path = value;
    else if (key == "templates") cfg.templates_path = value;
    else if (key == "qr_dir") cfg.qr_dir = value;
    else if (key == "out_dir") cfg.out_dir = value;
    else if (key == "ig_steps") cfg.ig_steps = as_int();
    else if (key == "t_frac") cfg.t_frac = as_double();
    else if (key == "u") cfg.u = as_double();
    else if (key == "v") cfg.v = as_int();
    else if (key == "seed") cfg.seed = std::stoull(value);
    else if (key == "jobs") cfg.jobs = as_int();
    else if (key == "n_facts") cfg.n_facts = as_int();
    else if (key == "domains") cfg.domains = value;
    else if (key == "num_layers") cfg.num_layers = as_int();
    else if (key == "d_model") cfg.d_model = as_int();
    else if (key == "ffn_dim") cfg.ffn_dim = as_int();
    else if (key == "num_heads") cfg.num_heads = as_int();
    else if (key == "max_seq_len") cfg.max_seq_len = as_int();
    else if (key == "epochs") cfg.epochs = as_int();
    else if (key == "learning_rate") cfg.learning_rate = as_double();
    else if (key == "batch_size") cfg.batch_size = as_int();
    else if (key == "target_accuracy") cfg.target_accuracy = as_double();
    else if (key == "plant_facts") cfg.plant_facts = as_int();
    else if (key == "gate_strength") cfg.gate_strength = as_double();
    else if (key == "methods") cfg.methods = value;
    else if (key == "predict_split") cfg.predict_split = as_double();
    else if (key == "attribute_gate") cfg.attribute_gate = as_bool();
    else if (key == "per_neuron_exact") cfg.per_neuron_exact = as_bool();
    else if (key == "overlap_jaccard") cfg.overlap_jaccard = as_bool();
    else if (key == "predict_absolute") cfg.predict_absolute = as_bool();
    else fail("config line ", lineno, ": unknown key '", key, "'");
  }
}

namespace detail {

inline void ensure_out_dir(const RunConfig& cfg, const std::vector<std::string>& outputs) {
  std::filesystem::create_directories(cfg.out_dir);
  if (cfg.force) return;
  for (const auto& name : outputs) {
    const auto path = std::filesystem::path(cfg.out_dir) / name;
    require(!std::filesystem::exists(path), "output already exists: ", path.string(),
            " (use --force to overwrite)");
  }
}

inline std::string out_path(const RunConfig& cfg, const std::string& name) {
  return (std::filesystem::path(cfg.out_dir) / name).string();
}

inline void write_manifest(const RunConfig& cfg, const std::string& command,
                           const std::map<std::string, std::string>& input_hashes,
                           const std::vector<std::string>& outputs) {
  nlohmann::json j;
  j["command"] = command;
  j["format_version"] = 1;
  j["config"] = cfg.to_json();
  j["inputs"] = input_hashes;
  j["outputs"] = outputs;
  write_file(out_path(cfg, "manifest.json"), j.dump(2) + "\n");
}

inline nlohmann::json read_manifest(const std::string& dir) {
  return nlohmann::json::parse(
      read_file((std::filesystem::path(dir) / "manifest.json").string()));
}

// prompt rendering seed and mode are pinned to the checkpoint, so every
// downstream command reproduces the prompts the model was built against
inline RenderOptions render_options_for(const Checkpoint& ckpt) {
  RenderOptions opts;
  opts.per_template_shuffle = true;
  if (auto it = ckpt.meta.find("render_mode"); it != ckpt.meta.end())
    opts.per_template_shuffle = (it->second != "fixed_letters");
  return opts;
}

inline std::uint64_t render_seed_for(const ModelConfig& cfg) {
  return derive_seed(cfg.rng_seed, "prompt-render");
}

inline void render_all(std::vector<MultiChoiceQuery>& queries, const TemplateSet& templates,
                       const RenderOptions& opts, std::uint64_t render_seed,
                       const Tokenizer& tokenizer) {
  for (auto& q : queries) {
    q.shuffle_seed = derive_seed(render_seed, "query", fnv1a64(q.id));
    try {
      render_prompts(q, templates, opts, &tokenizer);
    } catch (const Error& e) {
      fail("model/corpus vocabulary mismatch at query ", q.id, ": ", e.what());
    }
  }
}

// deterministic parallel map over query indices; results land in slots
template <typename Fn>
inline void parallel_for(int n, int jobs, Fn&& fn) {
  if (jobs <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> workers;
  const int count = std::min(jobs, n);
  workers.reserve(static_cast<std::size_t>(count));
  for (int w = 0; w < count; ++w)
    workers.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  for (auto& t : workers) t.join();
}

}  // namespace detail

// ---- gen-corpus ----

inline void cmd_gen_corpus(const RunConfig& cfg) {
  require(cfg.n_facts >= 1, "n_facts must be >= 1");
  detail::ensure_out_dir(cfg, {"dataset.json", "facts.json", "templates.txt",
                               "manifest.json"});
  const auto domains = cfg.domain_list();
  const auto facts = generate_synthetic_facts(cfg.n_facts, domains,
                                              derive_seed(cfg.seed, "corpus"));
  TemplateSet templates = cfg.templates_path.empty()
                              ? TemplateSet::defaults()
                              : TemplateSet::load(cfg.templates_path);
  std::vector<MultiChoiceQuery> queries;
  for (std::size_t i = 0; i < facts.size(); ++i)
    queries.push_back(to_multichoice(facts[i], facts, templates,
                                     derive_seed(cfg.seed, "options", i)));
  save_dataset(queries, detail::out_path(cfg, "dataset.json"));
  save_facts(facts, detail::out_path(cfg, "facts.json"));
  templates.save(detail::out_path(cfg, "templates.txt"));
  detail::write_manifest(cfg, "gen-corpus", {},
                         {"dataset.json", "facts.json", "templates.txt"});
  std::map<std::string, int> per_domain;
  for (const auto& q : queries) per_domain[q.domain]++;
  std::cout << "gen-corpus: " << queries.size() << " queries over "
            << per_domain.size() << " domains\n";
  for (const auto& [d, n] : per_domain)
    std::cout << "  " << d << ": " << n << "\n";
}

// ---- train ----

inline void cmd_train(const RunConfig& cfg) {
  require(!cfg.corpus_path.empty(), "train needs --corpus");
  require(!cfg.templates_path.empty(), "train needs --templates");
  detail::ensure_out_dir(cfg, {"model.ckpt", "train_log.csv", "manifest.json"});

  auto queries = load_dataset(cfg.corpus_path);
  const TemplateSet templates = TemplateSet::load(cfg.templates_path);
  const Tokenizer tokenizer = build_tokenizer(queries, templates);

  ModelConfig mc;
  mc.num_layers = cfg.num_layers;
  mc.d_model = cfg.d_model;
  mc.ffn_dim = cfg.ffn_dim;
  mc.vocab_size = tokenizer.size();
  mc.num_heads = cfg.num_heads;
  mc.max_seq_len = cfg.max_seq_len;
  mc.rng_seed = derive_seed(cfg.seed, "model-init");

  RenderOptions opts;
  detail::render_all(queries, templates, opts, detail::render_seed_for(mc), tokenizer);

  GluTransformer model = GluTransformer::random_init(mc);
  TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.learning_rate = cfg.learning_rate;
  tc.batch_size = cfg.batch_size;
  tc.seed = derive_seed(cfg.seed, "train");
  tc.target_accuracy = cfg.target_accuracy;
  const TrainLog log = train(model, queries, tc);

  Checkpoint ckpt;
  ckpt.model = std::move(model);
  ckpt.tokenizer = tokenizer;
  ckpt.meta["render_mode"] = "per_template";
  save_checkpoint(ckpt, detail::out_path(cfg, "model.ckpt"));

  std::string log_csv = "epoch,loss,accuracy\n";
  for (std::size_t e = 0; e < log.epochs.size(); ++e)
    log_csv += std::to_string(e) + "," + format_double(log.epochs[e].loss) + "," +
               format_double(log.epochs[e].accuracy) + "\n";
  write_file(detail::out_path(cfg, "train_log.csv"), log_csv);

  detail::write_manifest(cfg, "train",
                         {{"corpus", file_hash_hex(cfg.corpus_path)},
                          {"templates", file_hash_hex(cfg.templates_path)}},
                         {"model.ckpt", "train_log.csv"});
  std::cout << "train: " << log.epochs.size() << " epochs, final accuracy "
            << log.epochs.back().accuracy
            << (log.reached_target ? " (target reached)" : " (epoch limit)") << "\n";
}

// ---- plant ----

inline void cmd_plant(const RunConfig& cfg) {
  detail::ensure_out_dir(cfg, {"model.ckpt", "plant_manifest.json", "dataset.json",
                               "facts.json", "templates.txt", "manifest.json"});
  auto domains = cfg.domain_list();
  // distractor sampling needs at least 4 facts per domain
  const auto max_domains = static_cast<std::size_t>(std::max(1, cfg.plant_facts / 4));
  if (domains.size() > max_domains) {
    domains.resize(max_domains);
    std::cout << "plant: trimming to " << domains.size()
              << " domains so each keeps enough distractors\n";
  }
  const auto facts = generate_synthetic_facts(cfg.plant_facts, domains,
                                              derive_seed(cfg.seed, "corpus"));
  TemplateSet templates = cfg.templates_path.empty()
                              ? TemplateSet::defaults()
                              : TemplateSet::load(cfg.templates_path);

  ModelConfig mc;
  mc.num_layers = std::max(cfg.num_layers, 4);
  mc.d_model = cfg.d_model;
  mc.ffn_dim = cfg.ffn_dim;
  mc.num_heads = cfg.num_heads;
  mc.max_seq_len = cfg.max_seq_len;
  mc.rng_seed = derive_seed(cfg.seed, "model-init");

  PlantParams params;
  PlantSpec spec = make_plant_spec(facts, mc, derive_seed(cfg.seed, "plant"), params);
  spec.gate_strength = cfg.gate_strength;

  const RenderOptions opts{.per_template_shuffle = false};
  const std::uint64_t render_seed = detail::render_seed_for(mc);
  std::vector<MultiChoiceQuery> queries;
  for (std::size_t i = 0; i < facts.size(); ++i) {
    MultiChoiceQuery q =
        to_multichoice(facts[i], facts, templates,
                       derive_seed(render_seed, "query", fnv1a64("q" + facts[i].id.substr(1))));
    q.shuffle_seed = derive_seed(render_seed, "query", fnv1a64(q.id));
    force_correct_slot(q, spec.facts[i].correct_slot, templates, opts);
    queries.push_back(std::move(q));
  }
  const Tokenizer tokenizer = build_tokenizer(queries, templates);
  mc.vocab_size = tokenizer.size();
  for (auto& q : queries) render_prompts(q, templates, opts, &tokenizer);

  GluTransformer model = plant_model(mc, spec, queries, tokenizer, params);
  verify_plant(model, spec, queries);

  Checkpoint ckpt;
  ckpt.model = std::move(model);
  ckpt.tokenizer = tokenizer;
  ckpt.meta["render_mode"] = "fixed_letters";
  save_checkpoint(ckpt, detail::out_path(cfg, "model.ckpt"));
  save_plant_manifest(spec, detail::out_path(cfg, "plant_manifest.json"));
  save_dataset(queries, detail::out_path(cfg, "dataset.json"));
  save_facts(facts, detail::out_path(cfg, "facts.json"));
  templates.save(detail::out_path(cfg, "templates.txt"));
  detail::write_manifest(cfg, "plant", {},
                         {"model.ckpt", "plant_manifest.json", "dataset.json",
                          "facts.json", "templates.txt"});
  std::cout << "plant: " << spec.facts.size() << " facts planted, "
            << spec.common_neurons.size() << " common neurons\n";
}

// ---- locate ----

struct LocateArtifacts {
  Checkpoint ckpt;
  std::vector<MultiChoiceQuery> queries;
  SelectionBundle bundle;
};

inline LocateArtifacts run_locate(const RunConfig& cfg) {
  require(!cfg.corpus_path.empty(), "locate needs --corpus");
  require(!cfg.checkpoint_path.empty(), "locate needs --checkpoint");
  require(!cfg.templates_path.empty(), "locate needs --templates");

  LocateArtifacts art;
  art.ckpt = load_checkpoint(cfg.checkpoint_path);
  art.queries = load_dataset(cfg.corpus_path);
  require(!art.queries.empty(), "corpus is empty: ", cfg.corpus_path);
  const TemplateSet templates = TemplateSet::load(cfg.templates_path);
  detail::render_all(art.queries, templates, detail::render_options_for(art.ckpt),
                     detail::render_seed_for(art.ckpt.model.config), art.ckpt.tokenizer);

  const SelectionParams params = cfg.selection_params();
  const int n = static_cast<int>(art.queries.size());
  art.bundle.tables.resize(static_cast<std::size_t>(n));
  detail::parallel_for(n, cfg.jobs, [&](int i) {
    art.bundle.tables[static_cast<std::size_t>(i)] =
        neuron_attribution(art.ckpt.model, art.queries[static_cast<std::size_t>(i)], params.ig);
  });
  for (const auto& t : art.bundle.tables)
    art.bundle.clusters.clusters.push_back(build_cluster(t, params.t_frac));
  art.bundle.common = detect_common(art.bundle.clusters, params.u);
  for (std::size_t i = 0; i < art.bundle.tables.size(); ++i)
    art.bundle.qr_sets.push_back(score_and_select(
        art.bundle.tables[i], art.bundle.clusters.clusters[i], art.bundle.clusters,
        art.bundle.common, params.v, params.t_frac, params.u));
  return art;
}

inline void cmd_locate(const RunConfig& cfg) {
  detail::ensure_out_dir(cfg, {"qr_sets.json", "common_neurons.json",
                               "attribution.csv", "fbar.bin", "manifest.json"});
  LocateArtifacts art = run_locate(cfg);

  save_qr_sets(art.bundle.qr_sets, detail::out_path(cfg, "qr_sets.json"));
  save_common_neurons(art.bundle.common, detail::out_path(cfg, "common_neurons.json"));
  export_attribution_csv(art.bundle.tables, detail::out_path(cfg, "attribution.csv"));
  export_fbar_sidecar(art.bundle.tables, detail::out_path(cfg, "fbar.bin"));

  std::vector<std::string> outputs = {"qr_sets.json", "common_neurons.json",
                                      "attribution.csv", "fbar.bin"};
  // baseline methods requested beyond qrnca are emitted under the same schema
  for (const auto& name : cfg.method_list()) {
    const BaselineMethod method = baseline_from_string(name);
    if (method == BaselineMethod::qrnca) continue;
    const NeuronSets sets = baseline_select(method, art.bundle, art.ckpt.model.config,
                                            cfg.selection_params(),
                                            derive_seed(cfg.seed, "baseline"));
    std::vector<QrNeuronSet> as_sets;
    for (std::size_t i = 0; i < art.bundle.tables.size(); ++i) {
      QrNeuronSet s;
      s.query_id = art.bundle.tables[i].query_id;
      s.t_frac = cfg.t_frac;
      s.u = cfg.u;
      s.v = cfg.v;
      for (const auto& id : sets.at(s.query_id)) {
        NeuronScore sc;
        sc.id = id;
        sc.na = art.bundle.tables[i].na_at(id);
        sc.ica = inverse_cluster_attribution(id, art.bundle.clusters);
        sc.naica = sc.na * sc.ica;
        s.neurons.push_back(sc);
      }
      as_sets.push_back(std::move(s));
    }
    const std::string fname = "sets_" + name + ".json";
    save_qr_sets(as_sets, detail::out_path(cfg, fname));
    outputs.push_back(fname);
  }

  detail::write_manifest(cfg, "locate",
                         {{"corpus", file_hash_hex(cfg.corpus_path)},
                          {"checkpoint", file_hash_hex(cfg.checkpoint_path)},
                          {"templates", file_hash_hex(cfg.templates_path)}},
                         outputs);

  std::map<std::string, std::pair<double, int>> per_domain;
  for (std::size_t i = 0; i < art.queries.size(); ++i) {
    auto& [sum, count] = per_domain[art.queries[i].domain];
    sum += static_cast<double>(art.bundle.qr_sets[i].neurons.size());
    count += 1;
  }
  std::cout << "locate: " << art.queries.size() << " queries, "
            << art.bundle.common.neurons.size() << " common neurons\n";
  for (const auto& [d, sc] : per_domain)
    std::cout << "  mean QR set size [" << d << "]: " << sc.first / sc.second << "\n";
  return;
}

// ---- shared loader for commands that consume locate outputs ----

struct EvalInputs {
  Checkpoint ckpt;
  std::vector<MultiChoiceQuery> queries;
  std::map<std::string, std::vector<QrNeuronSet>> sets_by_method;  // "qrnca" included
};

inline EvalInputs load_eval_inputs(const RunConfig& cfg) {
  require(!cfg.qr_dir.empty(), "this command needs --qr-dir (locate output)");
  require(!cfg.checkpoint_path.empty(), "this command needs --checkpoint");
  require(!cfg.corpus_path.empty(), "this command needs --corpus");
  require(!cfg.templates_path.empty(), "this command needs --templates");

  const nlohmann::json manifest = detail::read_manifest(cfg.qr_dir);
  const std::string recorded = manifest.at("inputs").at("checkpoint").get<std::string>();
  const std::string current = file_hash_hex(cfg.checkpoint_path);
  require(recorded == current, "stale inputs: QR sets in ", cfg.qr_dir,
          " were built from checkpoint hash ", recorded, " but ", cfg.checkpoint_path,
          " hashes to ", current);

  EvalInputs in;
  in.ckpt = load_checkpoint(cfg.checkpoint_path);
  in.queries = load_dataset(cfg.corpus_path);
  const TemplateSet templates = TemplateSet::load(cfg.templates_path);
  detail::render_all(in.queries, templates, detail::render_options_for(in.ckpt),
                     detail::render_seed_for(in.ckpt.model.config), in.ckpt.tokenizer);

  in.sets_by_method["qrnca"] =
      load_qr_sets((std::filesystem::path(cfg.qr_dir) / "qr_sets.json").string());
  for (const auto& name : cfg.method_list()) {
    if (name == "qrnca") continue;
    const auto path = std::filesystem::path(cfg.qr_dir) / ("sets_" + name + ".json");
    require(std::filesystem::exists(path), "locate output missing ", path.string(),
            "; run locate with --methods including ", name);
    in.sets_by_method[name] = load_qr_sets(path.string());
  }
  return in;
}

inline NeuronSets to_neuron_sets(const std::vector<QrNeuronSet>& sets) {
  NeuronSets out;
  for (const auto& s : sets) out[s.query_id] = s.ids();
  return out;
}

// ---- eval (PCR) ----

inline void cmd_eval(const RunConfig& cfg) {
  detail::ensure_out_dir(cfg, {"pcr_table.csv", "manifest.json"});
  const EvalInputs in = load_eval_inputs(cfg);

  PcrTable table;
  std::vector<std::string> outputs = {"pcr_table.csv"};
  for (const auto& name : cfg.method_list()) {
    for (const auto mode :
         {InterventionSpec::Mode::boost, InterventionSpec::Mode::suppress}) {
      const PcrReport report =
          pcr(in.ckpt.model, to_neuron_sets(in.sets_by_method.at(name)), in.queries,
              in.queries, mode, derive_seed(cfg.seed, "pcr"));
      table.entries.push_back({name, mode_name(mode), report.related_mean,
                               report.unrelated_mean, report.ratio});
      const std::string fname = "pcr_" + name + "_" + mode_name(mode) + ".json";
      write_file(detail::out_path(cfg, fname), pcr_to_json(report).dump(2) + "\n");
      outputs.push_back(fname);
      std::cout << "pcr " << name << " " << mode_name(mode) << ": related "
                << report.related_mean << "% unrelated " << report.unrelated_mean
                << "% ratio " << report.ratio << "\n";
    }
  }
  write_file(detail::out_path(cfg, "pcr_table.csv"), table.to_csv());
  detail::write_manifest(cfg, "eval",
                         {{"corpus", file_hash_hex(cfg.corpus_path)},
                          {"checkpoint", file_hash_hex(cfg.checkpoint_path)}},
                         outputs);
}

// ---- edit ----

inline void cmd_edit(const RunConfig& cfg) {
  detail::ensure_out_dir(cfg, {"edit_table.csv", "manifest.json"});
  const EvalInputs in = load_eval_inputs(cfg);

  EditTable table;
  std::vector<std::string> outputs = {"edit_table.csv"};
  for (const auto& name : cfg.method_list()) {
    const EditReport report =
        editing_success(in.ckpt.model, to_neuron_sets(in.sets_by_method.at(name)),
                        in.queries);
    table.entries.push_back({name, report.boost_rate(), report.suppress_rate(),
                             report.boost_eligible, report.suppress_eligible});
    const std::string fname = "edit_" + name + ".json";
    write_file(detail::out_path(cfg, fname), edit_to_json(report).dump(2) + "\n");
    outputs.push_back(fname);
    std::cout << "edit " << name << ": boost " << report.boost_flips << "/"
              << report.boost_eligible << " suppress " << report.suppress_flips << "/"
              << report.suppress_eligible << "\n";
  }
  write_file(detail::out_path(cfg, "edit_table.csv"), table.to_csv());
  detail::write_manifest(cfg, "edit",
                         {{"corpus", file_hash_hex(cfg.corpus_path)},
                          {"checkpoint", file_hash_hex(cfg.checkpoint_path)}},
                         outputs);
}

// ---- predict ----

inline void cmd_predict(const RunConfig& cfg) {
  require(!cfg.corpus_path.empty(), "predict needs --corpus");
  require(!cfg.checkpoint_path.empty(), "predict needs --checkpoint");
  require(!cfg.templates_path.empty(), "predict needs --templates");
  detail::ensure_out_dir(cfg, {"predict_table.csv", "manifest.json"});

  const Checkpoint ckpt = load_checkpoint(cfg.checkpoint_path);
  auto all_queries = load_dataset(cfg.corpus_path);
  const TemplateSet templates = TemplateSet::load(cfg.templates_path);
  detail::render_all(all_queries, templates, detail::render_options_for(ckpt),
                     detail::render_seed_for(ckpt.model.config), ckpt.tokenizer);

  // mine QR neurons on one split, predict on the disjoint remainder
  const auto [mining, heldout] =
      split_queries(all_queries, cfg.predict_split, derive_seed(cfg.seed, "split"));
  require(!mining.empty() && !heldout.empty(),
          "predict split produced an empty part; adjust predict_split");

  SelectionParams params = cfg.selection_params();
  SelectionBundle bundle;
  bundle.tables.resize(mining.size());
  detail::parallel_for(static_cast<int>(mining.size()), cfg.jobs, [&](int i) {
    bundle.tables[static_cast<std::size_t>(i)] =
        neuron_attribution(ckpt.model, mining[static_cast<std::size_t>(i)], params.ig);
  });
  for (const auto& t : bundle.tables)
    bundle.clusters.clusters.push_back(build_cluster(t, params.t_frac));
  bundle.common = detect_common(bundle.clusters, params.u);
  for (std::size_t i = 0; i < bundle.tables.size(); ++i)
    bundle.qr_sets.push_back(score_and_select(bundle.tables[i],
                                              bundle.clusters.clusters[i],
                                              bundle.clusters, bundle.common, params.v,
                                              params.t_frac, params.u));

  // domain-specific neurons: union over the mining split per domain
  std::map<std::string, std::set<NeuronId>> domain_sets;
  for (std::size_t i = 0; i < mining.size(); ++i)
    for (const auto& sc : bundle.qr_sets[i].neurons)
      domain_sets[mining[i].domain].insert(sc.id);

  struct Row {
    int total = 0, prompt_correct = 0, neuron_correct = 0;
  };
  std::map<std::string, Row> rows;
  for (const auto& q : heldout) {
    auto& row = rows[q.domain];
    const auto ds = domain_sets.find(q.domain);
    require(ds != domain_sets.end() && !ds->second.empty(),
            "no mined domain neurons for domain ", q.domain);
    ++row.total;
    if (predict_option(ckpt.model, q) == q.correct_index) ++row.prompt_correct;
    const std::vector<NeuronId> neurons(ds->second.begin(), ds->second.end());
    if (neuron_based_predict(ckpt.model, q, neurons, cfg.predict_absolute) ==
        q.correct_index)
      ++row.neuron_correct;
  }

  std::string csv = "domain,queries,random_guess,prompt_based,neuron_based\n";
  Row total;
  for (const auto& [domain, row] : rows) {
    csv += domain + "," + std::to_string(row.total) + ",0.25," +
           format_double(static_cast<double>(row.prompt_correct) / row.total) + "," +
           format_double(static_cast<double>(row.neuron_correct) / row.total) + "\n";
    total.total += row.total;
    total.prompt_correct += row.prompt_correct;
    total.neuron_correct += row.neuron_correct;
  }
  csv += "total," + std::to_string(total.total) + ",0.25," +
         format_double(static_cast<double>(total.prompt_correct) / total.total) + "," +
         format_double(static_cast<double>(total.neuron_correct) / total.total) + "\n";
  write_file(detail::out_path(cfg, "predict_table.csv"), csv);
  detail::write_manifest(cfg, "predict",
                         {{"corpus", file_hash_hex(cfg.corpus_path)},
                          {"checkpoint", file_hash_hex(cfg.checkpoint_path)}},
                         {"predict_table.csv"});
  std::cout << "predict: prompt-based "
            << static_cast<double>(total.prompt_correct) / total.total
            << " neuron-based "
            << static_cast<double>(total.neuron_correct) / total.total << " over "
            << total.total << " held-out queries\n";
}

// ---- heatmap / analysis exports ----

inline void cmd_heatmap(const RunConfig& cfg) {
  detail::ensure_out_dir(cfg, {"overlap.csv", "layer_histogram.csv", "manifest.json"});
  const EvalInputs in = load_eval_inputs(cfg);
  const auto& model = in.ckpt.model;
  const auto& qr_sets = in.sets_by_method.at("qrnca");

  std::map<std::string, std::string> query_domain;
  std::map<std::string, std::set<NeuronId>> domain_sets;
  std::set<std::string> domains;
  for (const auto& q : in.queries) {
    query_domain[q.id] = q.domain;
    domains.insert(q.domain);
  }
  for (const auto& s : qr_sets)
    for (const auto& sc : s.neurons)
      domain_sets[query_domain.at(s.query_id)].insert(sc.id);
  for (const auto& d : domains) domain_sets[d];  // keep empty domains listed

  std::vector<std::string> outputs = {"overlap.csv", "layer_histogram.csv"};
  save_overlap_csv(build_overlap(domain_sets, cfg.overlap_jaccard),
                   detail::out_path(cfg, "overlap.csv"));

  const auto hist = layer_histogram(qr_sets, model.config.num_layers);
  std::string hist_csv = "layer,count\n";
  for (std::size_t l = 0; l < hist.size(); ++l)
    hist_csv += std::to_string(l) + "," + std::to_string(hist[l]) + "\n";
  write_file(detail::out_path(cfg, "layer_histogram.csv"), hist_csv);

  for (const auto& d : domains) {
    const HeatmapGrid grid = heatmap(qr_sets, query_domain, d, model.config.num_layers,
                                     model.config.ffn_dim);
    const std::string csv_name = "heatmap_" + d + ".csv";
    const std::string pgm_name = "heatmap_" + d + ".pgm";
    save_heatmap_csv(grid, detail::out_path(cfg, csv_name));
    save_heatmap_pgm(grid, detail::out_path(cfg, pgm_name));
    outputs.push_back(csv_name);
    outputs.push_back(pgm_name);
  }

  // vocabulary projections for the batch's common neurons, plus raw W_down
  // vectors of all selected QR neurons for external tools
  const CommonNeuronSet common = [&] {
    CommonNeuronSet c;
    const auto path = std::filesystem::path(cfg.qr_dir) / "common_neurons.json";
    const nlohmann::json j = nlohmann::json::parse(read_file(path.string()));
    c.u = j.at("u").get<double>();
    c.total_clusters = j.at("total_clusters").get<int>();
    for (const auto& n : j.at("neurons"))
      c.neurons.push_back(NeuronId{n.at("layer").get<int>(), n.at("index").get<int>()});
    return c;
  }();
  nlohmann::json projections = nlohmann::json::array();
  const int top_k = std::min(7, model.config.vocab_size);
  for (const auto& n : common.neurons)
    projections.push_back(projection_to_json(model, in.ckpt.tokenizer, n, top_k));
  write_file(detail::out_path(cfg, "common_projections.json"),
             projections.dump(2) + "\n");
  outputs.push_back("common_projections.json");

  std::set<NeuronId> all_selected;
  for (const auto& s : qr_sets)
    for (const auto& sc : s.neurons) all_selected.insert(sc.id);
  save_value_vectors_csv(model,
                         std::vector<NeuronId>(all_selected.begin(), all_selected.end()),
                         detail::out_path(cfg, "value_vectors.csv"));
  outputs.push_back("value_vectors.csv");

  detail::write_manifest(cfg, "heatmap",
                         {{"corpus", file_hash_hex(cfg.corpus_path)},
                          {"checkpoint", file_hash_hex(cfg.checkpoint_path)}},
                         outputs);
  std::cout << "heatmap: " << domains.size() << " domains, "
            << common.neurons.size() << " common neurons projected\n";
}

}  // namespace qrn
