#include <catch2/catch_amalgamated.hpp>

#include "qrn/checkpoint.hpp"
#include "qrn/training.hpp"

using namespace qrn;

namespace {

struct ToySetup {
  std::vector<MultiChoiceQuery> queries;
  Tokenizer tokenizer;
  ModelConfig config;
};

ToySetup small_corpus(int n_facts, std::uint64_t seed, int d_model = 32,
                      int ffn_dim = 48, int num_layers = 2) {
  ToySetup s;
  const TemplateSet templates = TemplateSet::defaults();
  const auto facts = generate_synthetic_facts(n_facts, {"geo"}, seed);
  for (std::size_t i = 0; i < facts.size(); ++i)
    s.queries.push_back(
        to_multichoice(facts[i], facts, templates, derive_seed(seed, "q", i)));
  s.tokenizer = build_tokenizer(s.queries, templates);
  for (auto& q : s.queries) render_prompts(q, templates, {}, &s.tokenizer);
  s.config = ModelConfig{.num_layers = num_layers,
                         .d_model = d_model,
                         .ffn_dim = ffn_dim,
                         .vocab_size = s.tokenizer.size(),
                         .num_heads = 4,
                         .max_seq_len = 64,
                         .rng_seed = derive_seed(seed, "model")};
  return s;
}

// central finite difference of the training loss wrt one parameter value;
// perturbs the model in place and restores it
double fd_param_grad(GluTransformer& model, const TrainExample& ex, double* param,
                     double eps) {
  auto loss_at = [&](double v) {
    *param = v;
    const Activations acts = forward_acts(model, ex.tokens, nullptr, false);
    Vec probs(acts.logits.row(acts.pred_pos).begin(),
              acts.logits.row(acts.pred_pos).end());
    softmax_inplace(probs);
    return -std::log(probs[static_cast<std::size_t>(ex.answer_token)]);
  };
  const double base = *param;
  const double up = loss_at(base + eps);
  const double down = loss_at(base - eps);
  *param = base;
  return (up - down) / (2 * eps);
}

}  // namespace

TEST_CASE("parameter gradients match finite differences", "[training][grad]") {
  ToySetup s = small_corpus(4, 77);
  GluTransformer model = GluTransformer::random_init(s.config);
  const TrainExample ex{s.queries[0].prompts[0].token_ids,
                        s.queries[0].prompts[0].answer_token};

  Grads grads = zero_grads(s.config);
  detail::backward_example(model, ex, grads);

  Rng rng(123);
  auto check = [&](Matrix& wm, const Matrix& gm, const char* name) {
    for (int trial = 0; trial < 4; ++trial) {
      const auto i = static_cast<std::size_t>(rng.next_below(wm.data.size()));
      const double fd = fd_param_grad(model, ex, &wm.data[i], 1e-5);
      const double bp = gm.data[i];
      INFO(name << "[" << i << "]: bp=" << bp << " fd=" << fd);
      CHECK(std::abs(bp - fd) <= 1e-4 * std::max({std::abs(fd), std::abs(bp), 1e-6}));
    }
  };
  check(model.tok_embed, grads.tok_embed, "tok_embed");
  check(model.pos_embed, grads.pos_embed, "pos_embed");
  for (int l = 0; l < s.config.num_layers; ++l) {
    auto& P = model.layers[static_cast<std::size_t>(l)];
    auto& G = grads.layers[static_cast<std::size_t>(l)];
    check(P.wq, G.wq, "wq");
    check(P.wk, G.wk, "wk");
    check(P.wv, G.wv, "wv");
    check(P.wo, G.wo, "wo");
    check(P.w_up, G.w_up, "w_up");
    check(P.w_gate, G.w_gate, "w_gate");
    check(P.w_down, G.w_down, "w_down");
  }
  check(model.unembed, grads.unembed, "unembed");

  // norm gains
  for (int trial = 0; trial < 4; ++trial) {
    auto& gain = model.layers[0].ffn_norm_gain;
    const auto i = static_cast<std::size_t>(rng.next_below(gain.size()));
    const double fd = fd_param_grad(model, ex, &gain[i], 1e-5);
    const double bp = grads.layers[0].ffn_norm_gain[i];
    CHECK(std::abs(bp - fd) <= 1e-4 * std::max({std::abs(fd), std::abs(bp), 1e-6}));
  }
}

TEST_CASE("one fact is memorized to perfect accuracy", "[training]") {
  ToySetup s = small_corpus(4, 91);
  s.queries.resize(1);
  GluTransformer model = GluTransformer::random_init(s.config);
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.learning_rate = 0.4;
  cfg.batch_size = 3;
  cfg.seed = 5;
  cfg.target_accuracy = 1.0;
  const TrainLog log = train(model, s.queries, cfg);
  REQUIRE_FALSE(log.epochs.empty());
  CHECK(log.reached_target);
  CHECK(log.epochs.back().accuracy == 1.0);

  // keep training past the accuracy stop until the letter probability
  // saturates; each call resumes from the current weights
  TrainConfig more = cfg;
  more.epochs = 1;
  auto min_prob = [&]() {
    double p = 1.0;
    for (const auto& pr : s.queries[0].prompts)
      p = std::min(p, answer_prob(model, pr.token_ids, pr.answer_token));
    return p;
  };
  for (int extra = 0; extra < 400 && min_prob() <= 0.9; ++extra)
    train(model, s.queries, more);
  CHECK(min_prob() > 0.9);
}

TEST_CASE("training is deterministic per seed", "[training]") {
  ToySetup s = small_corpus(4, 101);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.learning_rate = 0.2;
  cfg.batch_size = 4;
  cfg.seed = 17;
  cfg.target_accuracy = 1.0;

  GluTransformer m1 = GluTransformer::random_init(s.config);
  GluTransformer m2 = GluTransformer::random_init(s.config);
  const TrainLog l1 = train(m1, s.queries, cfg);
  const TrainLog l2 = train(m2, s.queries, cfg);
  CHECK(m1.unembed.data == m2.unembed.data);
  CHECK(m1.tok_embed.data == m2.tok_embed.data);
  for (int l = 0; l < s.config.num_layers; ++l)
    CHECK(m1.layers[static_cast<std::size_t>(l)].w_up.data ==
          m2.layers[static_cast<std::size_t>(l)].w_up.data);
  REQUIRE(l1.epochs.size() == l2.epochs.size());
  CHECK(l1.epochs.back().loss == l2.epochs.back().loss);
}

TEST_CASE("divergence aborts with a diagnostic", "[training]") {
  ToySetup s = small_corpus(4, 111);
  GluTransformer model = GluTransformer::random_init(s.config);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.learning_rate = 1e80;  // the norms absorb anything smaller
  cfg.batch_size = 4;
  cfg.seed = 3;
  CHECK_THROWS_AS(train(model, s.queries, cfg), Error);
}

TEST_CASE("train rejects empty corpora and vocab overflow", "[training]") {
  ToySetup s = small_corpus(4, 121);
  GluTransformer model = GluTransformer::random_init(s.config);
  TrainConfig cfg;
  CHECK_THROWS_AS(train(model, {}, cfg), Error);

  ModelConfig narrow = s.config;
  narrow.vocab_size = 8;  // corpus ids exceed this
  GluTransformer small = GluTransformer::random_init(narrow);
  CHECK_THROWS_AS(train(small, s.queries, cfg), Error);
}

TEST_CASE("checkpoints round-trip models and vocabulary", "[checkpoint]") {
  ToySetup s = small_corpus(4, 131);
  Checkpoint ckpt;
  ckpt.model = GluTransformer::random_init(s.config);
  ckpt.tokenizer = s.tokenizer;
  ckpt.meta["render_mode"] = "per_template";
  const std::string path =
      (std::filesystem::temp_directory_path() / "qrn_ckpt_test.bin").string();
  save_checkpoint(ckpt, path);
  const Checkpoint loaded = load_checkpoint(path);
  CHECK(loaded.model.config.d_model == s.config.d_model);
  CHECK(loaded.model.tok_embed.data == ckpt.model.tok_embed.data);
  CHECK(loaded.model.unembed.data == ckpt.model.unembed.data);
  CHECK(loaded.model.layers[1].w_gate.data == ckpt.model.layers[1].w_gate.data);
  CHECK(loaded.tokenizer.vocab() == s.tokenizer.vocab());
  CHECK(loaded.meta.at("render_mode") == "per_template");

  // byte-identical on re-save
  const std::string path2 =
      (std::filesystem::temp_directory_path() / "qrn_ckpt_test2.bin").string();
  save_checkpoint(loaded, path2);
  CHECK(read_file(path) == read_file(path2));

  // corrupted magic is rejected
  std::string bytes = read_file(path);
  bytes[0] = 'X';
  write_file(path, bytes);
  CHECK_THROWS_AS(load_checkpoint(path), Error);
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}
