#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "planted_fixture.hpp"
#include "qrn/analysis.hpp"
#include "qrn/evaluation.hpp"

using namespace qrn;
using qrn_test::planted50;

TEST_CASE("overlap rate basics", "[analysis]") {
  const std::set<NeuronId> a = {{0, 1}, {0, 2}};
  const std::set<NeuronId> b = {{0, 2}, {1, 0}, {1, 1}};
  CHECK(overlap_rate(a, a) == 1.0);
  CHECK(overlap_rate(a, {{3, 3}}) == 0.0);
  CHECK(overlap_rate(a, b) == Catch::Approx(0.5).epsilon(1e-12));
  CHECK(overlap_rate(a, b, /*jaccard=*/true) == Catch::Approx(0.25).epsilon(1e-12));
  CHECK(overlap_rate({}, b) == 0.0);
}

TEST_CASE("overlap matrix is symmetric with a unit diagonal", "[analysis]") {
  Rng rng(404);
  std::map<std::string, std::set<NeuronId>> sets;
  for (int d = 0; d < 4; ++d) {
    std::set<NeuronId> s;
    for (int i = 0; i < 12; ++i)
      s.insert({rng.next_int(0, 4), rng.next_int(0, 32)});
    sets["dom" + std::to_string(d)] = std::move(s);
  }
  const OverlapMatrix m = build_overlap(sets);
  REQUIRE(m.values.rows == 4);
  for (int i = 0; i < 4; ++i) {
    CHECK(m.values.at(i, i) == 1.0);
    for (int j = 0; j < 4; ++j) {
      CHECK(m.values.at(i, j) == m.values.at(j, i));
      CHECK(m.values.at(i, j) >= 0.0);
      CHECK(m.values.at(i, j) <= 1.0);
    }
  }
}

namespace {

QrNeuronSet set_with(const std::string& id,
                     const std::vector<std::pair<NeuronId, double>>& neurons) {
  QrNeuronSet s;
  s.query_id = id;
  for (const auto& [n, naica] : neurons) {
    NeuronScore sc;
    sc.id = n;
    sc.naica = naica;
    s.neurons.push_back(sc);
  }
  return s;
}

}  // namespace

TEST_CASE("layer histogram counts occurrences and conserves totals", "[analysis]") {
  const auto sets = std::vector<QrNeuronSet>{
      set_with("a", {{{3, 0}, 0.1}, {{3, 9}, 0.1}, {{7, 2}, 0.1}})};
  const auto h = layer_histogram(sets, 8);
  CHECK(h[3] == 2);
  CHECK(h[7] == 1);
  long total = 0;
  for (long c : h) total += c;
  CHECK(total == 3);

  const auto empty = layer_histogram({}, 8);
  for (long c : empty) CHECK(c == 0);
}

TEST_CASE("heatmap accumulates naica additively and commutes", "[analysis]") {
  std::map<std::string, std::string> domains = {{"a", "geo"}, {"b", "geo"}, {"c", "bio"}};
  const auto s1 = set_with("a", {{{1, 4}, 0.8}});
  const auto s2 = set_with("b", {{{1, 4}, 0.3}, {{2, 7}, 0.5}});
  const auto s3 = set_with("c", {{{0, 0}, 0.9}});

  const HeatmapGrid one = heatmap({s1}, domains, "geo", 4, 16);
  CHECK(one.grid.at(1, 4) == Catch::Approx(0.8));
  double sum = 0.0;
  for (double v : one.grid.data) sum += v;
  CHECK(sum == Catch::Approx(0.8));

  const HeatmapGrid both = heatmap({s1, s2, s3}, domains, "geo", 4, 16);
  CHECK(both.grid.at(1, 4) == Catch::Approx(1.1));
  CHECK(both.grid.at(2, 7) == Catch::Approx(0.5));
  CHECK(both.grid.at(0, 0) == 0.0);  // other domain

  const HeatmapGrid permuted = heatmap({s3, s2, s1}, domains, "geo", 4, 16);
  CHECK(permuted.grid.data == both.grid.data);

  // cell-wise additivity over disjoint query sets
  const HeatmapGrid part1 = heatmap({s1}, domains, "geo", 4, 16);
  const HeatmapGrid part2 = heatmap({s2}, domains, "geo", 4, 16);
  for (std::size_t i = 0; i < both.grid.data.size(); ++i)
    CHECK(both.grid.data[i] ==
          Catch::Approx(part1.grid.data[i] + part2.grid.data[i]).margin(1e-12));
}

TEST_CASE("planted layer histogram concentrates on the planted layer",
          "[analysis][slow]") {
  const auto& s = planted50();
  SelectionParams params;
  const SelectionBundle bundle = select_qrnca(s.model, s.queries, params);
  const auto h = layer_histogram(bundle.qr_sets, s.config.num_layers);
  const int planted_layer = s.spec.facts[0].neuron.layer;
  long planted_count = h[static_cast<std::size_t>(planted_layer)];
  long total = 0;
  for (long c : h) total += c;
  CHECK(planted_count * 2 > total);  // majority mass on the planted layer
}

TEST_CASE("value-vector projection reads the constructed letter mass",
          "[analysis]") {
  const auto& s = planted50();
  // a planted neuron's top token is its fixed correct letter
  const auto& pf = s.spec.facts[2];
  const auto top = project_value_vector(s.model, pf.neuron, 3);
  CHECK(top[0].first == Tokenizer::option_letter_id(pf.correct_slot));

  // common neurons decode to option letters, D first
  const auto ctop = project_value_vector(s.model, s.spec.common_neurons[0], 4);
  CHECK(ctop[0].first == 3);
  std::set<int> letter_ids = {0, 1, 2, 3};
  for (const auto& [tok, logit] : ctop) CHECK(letter_ids.count(tok) == 1);

  // zero rows fall back to token-id order
  GluTransformer zero_model = s.model;
  for (int e = 0; e < s.config.d_model; ++e)
    zero_model.layers[0].w_down.at(5, e) = 0.0;
  const auto ztop = project_value_vector(zero_model, NeuronId{0, 5}, 3);
  CHECK(ztop[0].first == 0);
  CHECK(ztop[1].first == 1);
  CHECK(ztop[2].first == 2);

  // deterministic
  CHECK(project_value_vector(s.model, pf.neuron, 5) ==
        project_value_vector(s.model, pf.neuron, 5));

  CHECK_THROWS_AS(project_value_vector(s.model, NeuronId{0, 99999}, 3), Error);
}

TEST_CASE("analysis exports have the expected shapes", "[analysis]") {
  const auto dir = std::filesystem::temp_directory_path();
  const std::string overlap_csv = (dir / "qrn_overlap.csv").string();
  const std::string heat_csv = (dir / "qrn_heat.csv").string();
  const std::string heat_pgm = (dir / "qrn_heat.pgm").string();

  std::map<std::string, std::set<NeuronId>> sets = {
      {"bio", {{0, 1}, {1, 2}}}, {"geo", {{0, 1}}}};
  save_overlap_csv(build_overlap(sets), overlap_csv);
  const std::string text = read_file(overlap_csv);
  CHECK(text.starts_with("domain,bio,geo\n"));
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);

  std::map<std::string, std::string> domains = {{"a", "geo"}};
  const HeatmapGrid g = heatmap({set_with("a", {{{1, 4}, 0.8}})}, domains, "geo", 2, 8);
  save_heatmap_csv(g, heat_csv);
  const std::string heat_text = read_file(heat_csv);
  CHECK(std::count(heat_text.begin(), heat_text.end(), '\n') == 2);
  save_heatmap_pgm(g, heat_pgm);
  CHECK(read_file(heat_pgm).starts_with("P2\n8 2\n255\n"));

  const auto& s = planted50();
  const std::string vec_csv = (dir / "qrn_vecs.csv").string();
  save_value_vectors_csv(s.model, {s.spec.facts[0].neuron}, vec_csv);
  const std::string vec_text = read_file(vec_csv);
  CHECK(std::count(vec_text.begin(), vec_text.end(), '\n') == 2);

  for (const auto& p : {overlap_csv, heat_csv, heat_pgm, vec_csv})
    std::filesystem::remove(p);
}
