// qrn: locate, score, edit, and evaluate query-relevant neurons in a small
// GLU-FFN transformer. Subcommands wire the pipeline end to end:
//
//   gen-corpus -> train | plant -> locate -> eval / edit / predict / heatmap
//
// Errors are reported as one JSON object on stderr with a nonzero exit.
#include <CLI11.hpp>
#include <iostream>

#include "qrn/run.hpp"

namespace {

void add_common(CLI::App* cmd, qrn::RunConfig& cfg) {
  cmd->add_option("--seed", cfg.seed, "master seed")->capture_default_str();
  cmd->add_option("--jobs", cfg.jobs, "worker threads for per-query stages")
      ->capture_default_str();
  cmd->add_flag("--force", cfg.force, "overwrite existing outputs");
  cmd->add_option("--out", cfg.out_dir, "output directory")->capture_default_str();
}

void add_hyper(CLI::App* cmd, qrn::RunConfig& cfg) {
  cmd->add_option("--ig-steps", cfg.ig_steps, "Riemann steps m")->capture_default_str();
  cmd->add_option("--t-frac", cfg.t_frac, "cluster threshold fraction of max na")
      ->capture_default_str();
  cmd->add_option("--u", cfg.u, "common-neuron cluster frequency")->capture_default_str();
  cmd->add_option("--v", cfg.v, "top-v selection size")->capture_default_str();
  cmd->add_flag("--attribute-gate", cfg.attribute_gate,
                "attribute dP/dg instead of dP/df");
  cmd->add_flag("--per-neuron-exact", cfg.per_neuron_exact,
                "exact per-neuron integration path");
}

void add_inputs(CLI::App* cmd, qrn::RunConfig& cfg, bool qr_dir = false) {
  cmd->add_option("--corpus", cfg.corpus_path, "dataset JSON");
  cmd->add_option("--checkpoint", cfg.checkpoint_path, "model checkpoint");
  cmd->add_option("--templates", cfg.templates_path, "prompt template file");
  if (qr_dir) cmd->add_option("--qr-dir", cfg.qr_dir, "locate output directory");
}

}  // namespace

int main(int argc, char** argv) {
  qrn::RunConfig cfg;

  // --config is resolved before flag parsing so flags override file values
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--config") {
      try {
        qrn::apply_config_text(cfg, qrn::read_file(argv[i + 1]));
      } catch (const std::exception& e) {
        std::cerr << nlohmann::json({{"error", e.what()}}).dump() << "\n";
        return 1;
      }
    }
  }

  CLI::App app{"query-relevant neuron toolkit"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "key=value configuration file")
      ->expected(1);

  auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic multi-choice corpus");
  add_common(gen, cfg);
  gen->add_option("--n", cfg.n_facts, "number of facts")->capture_default_str();
  gen->add_option("--domains", cfg.domains, "comma-separated domain labels")
      ->capture_default_str();
  gen->add_option("--templates", cfg.templates_path,
                  "template file to use instead of the defaults");

  auto* train = app.add_subcommand("train", "train a toy model to memorize a corpus");
  add_common(train, cfg);
  add_inputs(train, cfg);
  train->add_option("--epochs", cfg.epochs)->capture_default_str();
  train->add_option("--lr", cfg.learning_rate)->capture_default_str();
  train->add_option("--batch", cfg.batch_size)->capture_default_str();
  train->add_option("--target-accuracy", cfg.target_accuracy)->capture_default_str();
  train->add_option("--layers", cfg.num_layers)->capture_default_str();
  train->add_option("--d-model", cfg.d_model)->capture_default_str();
  train->add_option("--ffn-dim", cfg.ffn_dim)->capture_default_str();
  train->add_option("--heads", cfg.num_heads)->capture_default_str();

  auto* plant = app.add_subcommand("plant", "construct a planted-knowledge model");
  add_common(plant, cfg);
  plant->add_option("--facts", cfg.plant_facts, "number of planted facts")
      ->capture_default_str();
  plant->add_option("--domains", cfg.domains)->capture_default_str();
  plant->add_option("--gate-strength", cfg.gate_strength)->capture_default_str();
  plant->add_option("--layers", cfg.num_layers)->capture_default_str();
  plant->add_option("--d-model", cfg.d_model)->capture_default_str();
  plant->add_option("--ffn-dim", cfg.ffn_dim)->capture_default_str();
  plant->add_option("--templates", cfg.templates_path);

  auto* locate = app.add_subcommand("locate", "detect query-relevant neurons");
  add_common(locate, cfg);
  add_hyper(locate, cfg);
  add_inputs(locate, cfg);
  locate->add_option("--methods", cfg.methods,
                     "comma-separated selection methods to emit")
      ->capture_default_str();

  auto* eval = app.add_subcommand("eval", "probability-change ratio over located sets");
  add_common(eval, cfg);
  add_inputs(eval, cfg, true);
  eval->add_option("--methods", cfg.methods)->capture_default_str();

  auto* edit = app.add_subcommand("edit", "knowledge-editing flip rates");
  add_common(edit, cfg);
  add_inputs(edit, cfg, true);
  edit->add_option("--methods", cfg.methods)->capture_default_str();

  auto* predict =
      app.add_subcommand("predict", "neuron-based prediction on a held-out split");
  add_common(predict, cfg);
  add_hyper(predict, cfg);
  add_inputs(predict, cfg);
  predict->add_option("--split", cfg.predict_split, "mining split fraction")
      ->capture_default_str();
  predict->add_flag("--absolute", cfg.predict_absolute, "sum |gradient| per option");

  auto* heat = app.add_subcommand("heatmap", "heatmaps, overlap matrix, projections");
  add_common(heat, cfg);
  add_inputs(heat, cfg, true);
  heat->add_flag("--jaccard", cfg.overlap_jaccard, "Jaccard overlap normalization");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) qrn::cmd_gen_corpus(cfg);
    else if (train->parsed()) qrn::cmd_train(cfg);
    else if (plant->parsed()) qrn::cmd_plant(cfg);
    else if (locate->parsed()) qrn::cmd_locate(cfg);
    else if (eval->parsed()) qrn::cmd_eval(cfg);
    else if (edit->parsed()) qrn::cmd_edit(cfg);
    else if (predict->parsed()) qrn::cmd_predict(cfg);
    else if (heat->parsed()) qrn::cmd_heatmap(cfg);
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json({{"error", e.what()}}).dump() << "\n";
    return 1;
  }
  return 0;
}
