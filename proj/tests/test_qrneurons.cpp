#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "qrn/qrneurons.hpp"

using namespace qrn;

namespace {

// hand-built table over a 2x4 neuron grid
AttributionTable fake_table(const std::vector<double>& na_values,
                            const std::string& id = "q0") {
  AttributionTable t;
  t.query_id = id;
  t.num_layers = 2;
  t.ffn_dim = 4;
  t.raw = Matrix(2, 4);
  t.na = Matrix(2, 4);
  REQUIRE(na_values.size() <= 8);
  for (std::size_t i = 0; i < na_values.size(); ++i) t.na.data[i] = na_values[i];
  t.z = 1.0;
  t.raw = t.na;
  return t;
}

Cluster cluster_of(const std::vector<NeuronId>& ids, const std::string& q = "q") {
  Cluster c;
  c.query_id = q;
  c.members = ids;
  std::sort(c.members.begin(), c.members.end());
  return c;
}

}  // namespace

TEST_CASE("threshold rule keeps na above 0.2 of the maximum", "[qrneurons]") {
  const AttributionTable t = fake_table({1.0, 0.5, 0.1});
  const Cluster c = build_cluster(t, 0.2);
  CHECK(c.threshold_used == Catch::Approx(0.2).epsilon(1e-12));
  REQUIRE(c.members.size() == 2);
  CHECK(c.members[0] == NeuronId{0, 0});
  CHECK(c.members[1] == NeuronId{0, 1});
}

TEST_CASE("a single positive neuron is always its own cluster", "[qrneurons]") {
  const AttributionTable t = fake_table({0.7});
  const Cluster c = build_cluster(t, 0.2);
  REQUIRE(c.members.size() == 1);
  CHECK(c.members[0] == NeuronId{0, 0});
}

TEST_CASE("negative na never enters a cluster", "[qrneurons]") {
  const AttributionTable t = fake_table({1.0, -0.9, -0.5, 0.3});
  const Cluster c = build_cluster(t, 0.2);
  for (const auto& n : c.members) CHECK(t.na_at(n) > 0.0);
  CHECK(c.members.size() == 2);
}

TEST_CASE("all-zero table yields an explicit empty-cluster warning", "[qrneurons]") {
  const AttributionTable t = fake_table({0.0, 0.0});
  const Cluster c = build_cluster(t, 0.2);
  CHECK(c.empty_warning);
  CHECK(c.members.empty());
}

TEST_CASE("inverse cluster attribution matches closed forms to 1e-12",
          "[qrneurons]") {
  const NeuronId x{0, 0}, y{1, 3};
  SECTION("count 0 of 10 gives ln 10") {
    ClusterSet cs;
    for (int i = 0; i < 10; ++i) cs.clusters.push_back(cluster_of({y}));
    CHECK(inverse_cluster_attribution(x, cs) ==
          Catch::Approx(2.302585092994046).margin(1e-12));
  }
  SECTION("count 10 of 10 gives ln(10/11)") {
    ClusterSet cs;
    for (int i = 0; i < 10; ++i) cs.clusters.push_back(cluster_of({x}));
    CHECK(inverse_cluster_attribution(x, cs) ==
          Catch::Approx(-0.09531017980432486).margin(1e-12));
  }
  SECTION("count 9 of 100 gives ln 10") {
    ClusterSet cs;
    for (int i = 0; i < 100; ++i)
      cs.clusters.push_back(cluster_of(i < 9 ? std::vector<NeuronId>{x}
                                             : std::vector<NeuronId>{y}));
    CHECK(inverse_cluster_attribution(x, cs) ==
          Catch::Approx(2.302585092994046).margin(1e-12));
  }
}

TEST_CASE("ica strictly decreases as the count rises", "[qrneurons]") {
  const NeuronId x{0, 1};
  double prev = 1e300;
  for (int count = 0; count <= 12; ++count) {
    ClusterSet cs;
    for (int i = 0; i < 12; ++i)
      cs.clusters.push_back(cluster_of(i < count ? std::vector<NeuronId>{x}
                                                 : std::vector<NeuronId>{}));
    const double ica = inverse_cluster_attribution(x, cs);
    CHECK(ica < prev);
    prev = ica;
  }
}

TEST_CASE("common detection uses a strict frequency threshold", "[qrneurons]") {
  const NeuronId x{0, 2};
  auto build = [&](int hits) {
    ClusterSet cs;
    for (int i = 0; i < 10; ++i)
      cs.clusters.push_back(cluster_of(i < hits ? std::vector<NeuronId>{x}
                                                : std::vector<NeuronId>{}));
    return cs;
  };
  CHECK(detect_common(build(4), 0.3).contains(x));       // 0.4 > 0.3
  CHECK_FALSE(detect_common(build(3), 0.3).contains(x)); // 0.3 is not > 0.3
  CHECK_THROWS_AS(detect_common(build(4), 0.0), Error);
  CHECK_THROWS_AS(detect_common(build(4), 1.0), Error);
}

TEST_CASE("selection ranks by naica and removes common neurons", "[qrneurons]") {
  // na 0.5 with ica 2.0 outranks na 0.9 with ica 0.5
  AttributionTable t = fake_table({0.5, 0.9, 0.4, 0.3}, "q-rank");
  ClusterSet cs;
  // neuron (0,1) occurs in 6 of 9 clusters (ica low); (0,0) only once
  cs.clusters.push_back(cluster_of({NeuronId{0, 0}, NeuronId{0, 1}, NeuronId{0, 2},
                                    NeuronId{0, 3}},
                                   "q-rank"));
  for (int i = 0; i < 8; ++i)
    cs.clusters.push_back(cluster_of(i < 5 ? std::vector<NeuronId>{NeuronId{0, 1}}
                                           : std::vector<NeuronId>{},
                                     "other"));
  const Cluster& mine = cs.clusters.front();
  const CommonNeuronSet common = detect_common(cs, 0.9);  // 6/9 is below 0.9
  const QrNeuronSet set = score_and_select(t, mine, cs, common, 20, 0.2, 0.9);
  REQUIRE(set.neurons.size() == 4);
  CHECK(set.neurons[0].id == NeuronId{0, 0});
  CHECK(set.neurons[0].naica ==
        Catch::Approx(0.5 * std::log(9.0 / 2.0)).margin(1e-12));
  for (const auto& s : set.neurons) CHECK(s.naica == Catch::Approx(s.na * s.ica).margin(1e-12));

  // now make (0,1) common and confirm it disappears from the selection
  const CommonNeuronSet common2 = detect_common(cs, 0.3);
  CHECK(common2.contains(NeuronId{0, 1}));
  const QrNeuronSet set2 = score_and_select(t, mine, cs, common2, 20, 0.2, 0.3);
  for (const auto& s : set2.neurons) CHECK_FALSE(s.id == NeuronId{0, 1});
  CHECK(set2.neurons.size() == 3);
}

TEST_CASE("selection soundness on randomized tables", "[qrneurons]") {
  Rng rng(808);
  for (int trial = 0; trial < 25; ++trial) {
    // random na grid over 3 queries
    std::vector<AttributionTable> tables;
    ClusterSet cs;
    for (int q = 0; q < 3; ++q) {
      std::vector<double> na(8);
      for (auto& v : na) v = rng.next_normal();
      tables.push_back(fake_table(na, "q" + std::to_string(q)));
      cs.clusters.push_back(build_cluster(tables.back(), 0.2));
    }
    const CommonNeuronSet common = detect_common(cs, 0.5);
    const int v = 1 + static_cast<int>(rng.next_below(6));
    for (int q = 0; q < 3; ++q) {
      const auto& cluster = cs.clusters[static_cast<std::size_t>(q)];
      const QrNeuronSet set =
          score_and_select(tables[static_cast<std::size_t>(q)], cluster, cs, common, v, 0.2, 0.5);
      CHECK(static_cast<int>(set.neurons.size()) <= v);
      double worst_selected = 1e300;
      for (const auto& s : set.neurons) {
        CHECK(std::binary_search(cluster.members.begin(), cluster.members.end(), s.id));
        CHECK_FALSE(common.contains(s.id));
        worst_selected = std::min(worst_selected, s.naica);
      }
      // no unselected, non-common cluster member strictly outranks a selected one
      if (static_cast<int>(set.neurons.size()) == v) continue;
      for (const auto& n : cluster.members) {
        if (common.contains(n)) continue;
        bool selected = false;
        for (const auto& s : set.neurons) selected |= (s.id == n);
        if (selected) continue;
        const double naica =
            tables[static_cast<std::size_t>(q)].na_at(n) * inverse_cluster_attribution(n, cs);
        CHECK(naica <= worst_selected + 1e-12);
      }
    }
  }
}

TEST_CASE("qr sets round-trip through JSON", "[qrneurons]") {
  AttributionTable t = fake_table({0.6, 0.3, 0.2, 0.1}, "q-json");
  ClusterSet cs;
  cs.clusters.push_back(build_cluster(t, 0.2));
  const CommonNeuronSet common = detect_common(cs, 0.5);
  const QrNeuronSet set = score_and_select(t, cs.clusters[0], cs, common, 20, 0.2, 0.5);
  const std::string path =
      (std::filesystem::temp_directory_path() / "qrn_sets.json").string();
  save_qr_sets({set}, path);
  const auto loaded = load_qr_sets(path);
  REQUIRE(loaded.size() == 1);
  CHECK(loaded[0].query_id == set.query_id);
  REQUIRE(loaded[0].neurons.size() == set.neurons.size());
  for (std::size_t i = 0; i < set.neurons.size(); ++i) {
    CHECK(loaded[0].neurons[i].id == set.neurons[i].id);
    CHECK(loaded[0].neurons[i].naica == set.neurons[i].naica);
  }
  CHECK(loaded[0].v == 20);
  std::filesystem::remove(path);
}
