#include <catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "tagbd/defense.hpp"

using namespace tagbd;
using Catch::Approx;

namespace {

// star around node 0; leaf i sits at cosine sims[i-1] to the centre
struct Star {
  TextAttributedGraph graph;
  Tensor embeddings;
};

Star star(std::vector<double> sims) {
  Star s;
  const std::size_t n = sims.size() + 1;
  s.graph.num_nodes = n;
  s.graph.num_classes = 1;
  s.graph.texts.assign(n, "t");
  s.graph.labels.assign(n, 0);
  std::vector<std::pair<NodeId, NodeId>> edges;
  for (NodeId i = 1; i < n; ++i) edges.push_back({0, i});
  assign_edges(s.graph, edges);
  s.embeddings = Tensor(n, 2);
  s.embeddings(0, 0) = 1.0;
  for (std::size_t i = 1; i < n; ++i) {
    s.embeddings(i, 0) = sims[i - 1];
    s.embeddings(i, 1) = std::sqrt(1.0 - sims[i - 1] * sims[i - 1]);
  }
  return s;
}

}  // namespace

TEST_CASE("absolute thresholds outside the cosine range") {
  auto s = star({0.9, 0.1, 0.5});
  auto none = prune_edges(s.graph, s.embeddings, {ThresholdMode::absolute, -1.0});
  CHECK(none.removed.empty());
  CHECK(none.graph.same_topology(s.graph));
  auto all = prune_edges(s.graph, s.embeddings, {ThresholdMode::absolute, 1.0 + 1e-9});
  CHECK(all.removed.size() == 3);
  CHECK(all.graph.num_edges() == 0);
}

TEST_CASE("percentile pruning removes the least similar edges") {
  auto s = star({0.9, 0.1, 0.5});
  auto r = prune_edges(s.graph, s.embeddings, {ThresholdMode::percentile, 0.34});
  REQUIRE(r.removed.size() == 1);
  CHECK(r.removed[0].target == 2);
  CHECK(r.removed[0].similarity == Approx(0.1).epsilon(1e-12));
  CHECK_FALSE(r.graph.has_edge(0, 2));
  CHECK(r.graph.has_edge(0, 1));

  auto zero = prune_edges(s.graph, s.embeddings, {ThresholdMode::percentile, 0.0});
  CHECK(zero.removed.empty());
  CHECK(prune_edges(s.graph, s.embeddings, {ThresholdMode::percentile, 0.67}).removed.size() == 2);
}

TEST_CASE("percentile ties break by edge id") {
  auto s = star({0.5, 0.5, 0.5, 0.5});
  auto r = prune_edges(s.graph, s.embeddings, {ThresholdMode::percentile, 0.5});
  REQUIRE(r.removed.size() == 2);
  CHECK(r.removed[0].edge_id == 0);
  CHECK(r.removed[1].edge_id == 1);
}

TEST_CASE("prune config validation") {
  auto s = star({0.9});
  CHECK_THROWS_AS(prune_edges(s.graph, s.embeddings, {ThresholdMode::percentile, 1.0}), ConfigError);
  CHECK_THROWS_AS(prune_edges(s.graph, Tensor(5, 2), {ThresholdMode::percentile, 0.1}), ShapeError);
}

TEST_CASE("outlier scores") {
  SECTION("identical embeddings score zero") {
    Tensor x(6, 3, 1.0);
    std::vector<NodeId> c{0, 1, 2, 3, 4, 5};
    auto r = detect_outliers(x, c, {2, 0.2});
    for (auto& s : r.scores) CHECK(s.score == Approx(0.0).margin(1e-12));
    CHECK(r.flagged == std::vector<NodeId>{0, 1});  // ceil(1.2) = 2, ties by id
  }
  SECTION("an antipodal node scores highest") {
    Tensor x(5, 2);
    for (std::size_t i = 0; i < 4; ++i) x(i, 0) = 1.0;
    x(4, 0) = -1.0;
    std::vector<NodeId> c{0, 1, 2, 3, 4};
    auto r = detect_outliers(x, c, {1, 0.1});
    CHECK(r.flagged == std::vector<NodeId>{4});
    CHECK(r.scores[4].score == Approx(2.0));
  }
  SECTION("flag count is the ceiling of the fraction") {
    Rng rng(9);
    Tensor x(40, 4);
    for (auto& v : x.values()) v = rng.uniform(-1.0, 1.0);
    std::vector<NodeId> c;
    for (NodeId i = 0; i < 40; ++i) c.push_back(i);
    CHECK(detect_outliers(x, c, {5, 0.05}).flagged.size() == 2);
    CHECK(detect_outliers(x, c, {5, 0.26}).flagged.size() == 11);
  }
  SECTION("too few candidates") {
    std::vector<NodeId> c{0, 1};
    CHECK_THROWS_AS(detect_outliers(Tensor(2, 2, 1.0), c, {2, 0.1}), Error);
  }
}

TEST_CASE("defense audit rows") {
  auto s = star({0.9, 0.1, 0.5});
  auto r = prune_edges(s.graph, s.embeddings, {ThresholdMode::percentile, 0.67});
  OutlierResult od;
  od.scores = {{3, 0.25}, {7, 0.5}};
  od.flagged = {7};
  std::ostringstream out;
  export_defense_audit(r.removed, &od, out);
  std::istringstream in(out.str());
  std::string line;
  std::vector<nlohmann::json> rows;
  while (std::getline(in, line)) rows.push_back(nlohmann::json::parse(line));
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].at("kind") == "removed_edge");
  CHECK(rows[2].at("kind") == "flagged_node");
  CHECK(rows[2].at("node_id") == 7);
  CHECK(rows[2].at("score") == 0.5);
}
