#include <catch2/catch_amalgamated.hpp>

#include "oracle_forward.hpp"
#include "qrn/model.hpp"

using namespace qrn;

namespace {

ModelConfig toy_config(std::uint64_t seed = 11) {
  ModelConfig cfg;
  cfg.num_layers = 4;
  cfg.d_model = 64;
  cfg.ffn_dim = 128;
  cfg.vocab_size = 256;
  cfg.num_heads = 4;
  cfg.max_seq_len = 32;
  cfg.rng_seed = seed;
  return cfg;
}

std::vector<int> random_tokens(Rng& rng, int len, int vocab) {
  std::vector<int> t(static_cast<std::size_t>(len));
  for (auto& x : t) x = rng.next_int(0, vocab);
  return t;
}

}  // namespace

TEST_CASE("zero-weight model gives equal logits and zero f", "[model]") {
  ModelConfig cfg = toy_config();
  GluTransformer m = GluTransformer::zeros(cfg);
  const std::vector<int> toks = {1, 2, 3, 4};
  const ForwardTrace t = forward(m, toks);
  for (int p = 0; p < 4; ++p) {
    const auto row = t.logits.row(p);
    for (double v : row) CHECK(v == row[0]);
  }
  for (const auto& f : t.f)
    for (double v : f.data) CHECK(v == 0.0);
}

TEST_CASE("forward is deterministic bit-for-bit", "[model]") {
  GluTransformer m = GluTransformer::random_init(toy_config());
  Rng rng(99);
  const auto toks = random_tokens(rng, 12, m.config.vocab_size);
  const ForwardTrace a = forward(m, toks);
  const ForwardTrace b = forward(m, toks);
  CHECK(a.logits.data == b.logits.data);
  for (std::size_t l = 0; l < a.f.size(); ++l) {
    CHECK(a.f[l].data == b.f[l].data);
    CHECK(a.g[l].data == b.g[l].data);
  }
}

TEST_CASE("random model matches the reference forward to 1e-10", "[model]") {
  GluTransformer m = GluTransformer::random_init(toy_config(17));
  Rng rng(5);
  const auto toks = random_tokens(rng, 8, m.config.vocab_size);
  const ForwardTrace t = forward(m, toks);
  const auto ref = qrn_test::reference_logits(m, toks);
  for (int p = 0; p < 8; ++p)
    for (int j = 0; j < m.config.vocab_size; ++j)
      CHECK(std::abs(t.logits.at(p, j) - ref[p][j]) < 1e-10);
}

TEST_CASE("forward rejects bad input", "[model]") {
  GluTransformer m = GluTransformer::random_init(toy_config());
  CHECK_THROWS_AS(forward(m, {}), Error);
  CHECK_THROWS_AS(forward(m, {m.config.vocab_size}), Error);
  CHECK_THROWS_AS(forward(m, std::vector<int>(m.config.max_seq_len + 1, 1)), Error);
}

TEST_CASE("softmax probabilities normalize and saturate", "[model]") {
  SECTION("uniform logits give 1/vocab") {
    Vec logits(64, 0.0);
    CHECK(prob_from_logits(logits, 7) == Catch::Approx(1.0 / 64).epsilon(1e-12));
  }
  SECTION("huge answer logit saturates to 1") {
    Vec logits(64, 0.0);
    logits[9] = 1e6;
    CHECK(prob_from_logits(logits, 9) == Catch::Approx(1.0).margin(1e-9));
  }
  SECTION("probabilities sum to 1 at every position of a random model") {
    GluTransformer m = GluTransformer::random_init(toy_config(3));
    Rng rng(4);
    const auto toks = random_tokens(rng, 10, m.config.vocab_size);
    const ForwardTrace t = forward(m, toks);
    for (int p = 0; p < 10; ++p) {
      double sum = 0.0;
      for (int j = 0; j < m.config.vocab_size; ++j)
        sum += prob_from_logits(t.logits.row(p), j);
      CHECK(sum == Catch::Approx(1.0).margin(1e-9));
    }
  }
  SECTION("answer_prob equals softmax of final-position logits") {
    GluTransformer m = GluTransformer::random_init(toy_config(8));
    Rng rng(2);
    const auto toks = random_tokens(rng, 6, m.config.vocab_size);
    const ForwardTrace t = forward(m, toks);
    CHECK(answer_prob(m, toks, 42) ==
          Catch::Approx(prob_from_logits(t.logits.row(t.pred_pos), 42)).epsilon(1e-12));
  }
}

TEST_CASE("backprop gradient matches central finite differences", "[model][grad]") {
  GluTransformer m = GluTransformer::random_init(toy_config(23));
  Rng rng(71);
  for (int trial = 0; trial < 8; ++trial) {
    const auto toks = random_tokens(rng, 3 + trial, m.config.vocab_size);
    const int ans = rng.next_int(0, m.config.vocab_size);
    const int layer = rng.next_int(0, m.config.num_layers);
    const int idx = rng.next_int(0, m.config.ffn_dim);
    const Vec bp = grad_answer_prob(m, toks, ans, layer);
    const double fd =
        qrn_test::fd_grad_f(m, toks, ans, NeuronId{layer, idx}, 1e-3);
    const double rel = std::abs(bp[static_cast<std::size_t>(idx)] - fd) /
                       std::max(std::abs(fd), 1e-12);
    CHECK(rel <= 1e-3);
  }
}

TEST_CASE("gradient of a disconnected neuron is zero", "[model][grad]") {
  GluTransformer m = GluTransformer::random_init(toy_config(31));
  const int layer = 1, idx = 5;
  for (int e = 0; e < m.config.d_model; ++e)
    m.layers[layer].w_down.at(idx, e) = 0.0;
  Rng rng(6);
  const auto toks = random_tokens(rng, 7, m.config.vocab_size);
  const Vec g = grad_answer_prob(m, toks, 10, layer);
  CHECK(g[idx] == 0.0);
}

TEST_CASE("gradient vector is reproducible bit-for-bit", "[model][grad]") {
  GluTransformer m = GluTransformer::random_init(toy_config(37));
  Rng rng(9);
  const auto toks = random_tokens(rng, 9, m.config.vocab_size);
  const Vec a = grad_answer_prob(m, toks, 3, 2);
  const Vec b = grad_answer_prob(m, toks, 3, 2);
  CHECK(a == b);
}

TEST_CASE("empty intervention is a no-op", "[model][override]") {
  GluTransformer m = GluTransformer::random_init(toy_config(41));
  Rng rng(13);
  const auto toks = random_tokens(rng, 10, m.config.vocab_size);
  const ForwardTrace clean = forward(m, toks);
  InterventionSpec spec;
  spec.mode = InterventionSpec::Mode::suppress;
  const ForwardTrace t = forward_with_override(m, toks, spec, &clean);
  CHECK(t.logits.data == clean.logits.data);
}

TEST_CASE("suppressing a whole layer equals removing its FFN contribution",
          "[model][override]") {
  GluTransformer m = GluTransformer::random_init(toy_config(43));
  Rng rng(15);
  const auto toks = random_tokens(rng, 8, m.config.vocab_size);
  const int layer = 2, ans = 77;

  InterventionSpec spec;
  spec.mode = InterventionSpec::Mode::suppress;
  for (int i = 0; i < m.config.ffn_dim; ++i) spec.neurons.push_back({layer, i});
  const ForwardTrace t = forward_with_override(m, toks, spec);
  const double p_override = prob_from_logits(t.logits.row(t.pred_pos), ans);

  // independent route: rescore from the cached stream with f = 0
  ScoringCache cache(m, toks);
  const Vec zeros(static_cast<std::size_t>(m.config.ffn_dim), 0.0);
  const double p_ablated = cache.score(layer, zeros, ans, nullptr);
  CHECK(p_override == Catch::Approx(p_ablated).epsilon(1e-12));
}

TEST_CASE("override locality: layers below are untouched bit-for-bit",
          "[model][override]") {
  GluTransformer m = GluTransformer::random_init(toy_config(47));
  Rng rng(20);
  const auto toks = random_tokens(rng, 11, m.config.vocab_size);
  const ForwardTrace clean = forward(m, toks);
  InterventionSpec spec;
  spec.mode = InterventionSpec::Mode::set_value;
  spec.value = 3.5;
  spec.neurons = {{2, 10}, {2, 11}, {3, 100}};
  const ForwardTrace t = forward_with_override(m, toks, spec, &clean);
  for (int l = 0; l < 2; ++l) {
    CHECK(t.f[l].data == clean.f[l].data);
    CHECK(t.g[l].data == clean.g[l].data);
  }
  CHECK(t.f[2].at(t.pred_pos, 10) == 3.5);
  CHECK(t.f[2].at(t.pred_pos, 11) == 3.5);
  CHECK(t.f[3].at(t.pred_pos, 100) == 3.5);
}

TEST_CASE("boost requires a recorded baseline", "[model][override]") {
  GluTransformer m = GluTransformer::random_init(toy_config(53));
  InterventionSpec spec;
  spec.mode = InterventionSpec::Mode::boost;
  spec.neurons = {{0, 0}};
  CHECK_THROWS_AS(resolve_intervention(m, spec, nullptr), Error);
}

TEST_CASE("suffix rescoring agrees with the full forward", "[model]") {
  GluTransformer m = GluTransformer::random_init(toy_config(59));
  Rng rng(30);
  const auto toks = random_tokens(rng, 13, m.config.vocab_size);
  const int ans = 123;
  const double p_full = answer_prob(m, toks, ans);
  ScoringCache cache(m, toks);
  for (int layer = 0; layer < m.config.num_layers; ++layer) {
    const double p_suffix =
        cache.score(layer, cache.clean_f(layer), ans, nullptr);
    CHECK(p_suffix == Catch::Approx(p_full).epsilon(1e-12));
  }
}

TEST_CASE("gate-side gradient matches finite differences", "[model][grad]") {
  GluTransformer m = GluTransformer::random_init(toy_config(61));
  Rng rng(33);
  const auto toks = random_tokens(rng, 6, m.config.vocab_size);
  const int ans = 9, layer = 1, idx = 17;
  ScoringCache cache(m, toks);
  Vec grad;
  cache.score(layer, cache.clean_g(layer), ans, &grad, AttrTarget::gate_g);

  const double eps = 1e-3;
  Vec gplus(cache.clean_g(layer).begin(), cache.clean_g(layer).end());
  Vec gminus = gplus;
  gplus[idx] += eps;
  gminus[idx] -= eps;
  const double fd = (cache.score(layer, gplus, ans, nullptr, AttrTarget::gate_g) -
                     cache.score(layer, gminus, ans, nullptr, AttrTarget::gate_g)) /
                    (2 * eps);
  CHECK(std::abs(grad[idx] - fd) <= 1e-3 * std::max(std::abs(fd), 1e-12));
}

TEST_CASE("config invariants are enforced", "[model]") {
  ModelConfig cfg = toy_config();
  cfg.d_model = 63;  // not divisible by num_heads
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = toy_config();
  cfg.ffn_dim = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = toy_config();
  cfg.vocab_size = 3;
  CHECK_THROWS_AS(cfg.validate(), Error);
}
