#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "tagbd/graph.hpp"

using namespace tagbd;
using Catch::Approx;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "tagbd_test_graph";
  std::filesystem::create_directories(dir);
  return dir / name;
}

void write(const std::filesystem::path& p, const std::string& s) { std::ofstream(p) << s; }

TextAttributedGraph make_graph(std::size_t n, std::vector<std::pair<NodeId, NodeId>> edges) {
  TextAttributedGraph g;
  g.num_nodes = n;
  g.num_classes = 1;
  g.texts.assign(n, "t");
  g.labels.assign(n, 0);
  assign_edges(g, edges);
  return g;
}

std::string three_nodes() {
  return "{\"id\":\"a\",\"text\":\"x y\",\"label\":0}\n"
         "{\"id\":\"b\",\"text\":\"y z\",\"label\":1}\n"
         "{\"id\":\"c\",\"text\":\"z\",\"label\":1}\n";
}

}  // namespace

TEST_CASE("load_dataset symmetrizes edges") {
  write(scratch("n1.jsonl"), three_nodes());
  write(scratch("e1.tsv"), "a\tb\nb\tc\n");
  auto g = load_dataset(scratch("n1.jsonl"), scratch("e1.tsv"));
  CHECK(g.num_nodes == 3);
  CHECK(g.num_directed_entries() == 4);
  CHECK(g.num_classes == 2);
  CHECK(g.has_edge(1, 0));
  CHECK(g.texts[1] == "y z");
}

TEST_CASE("load_dataset deduplicates reversed edges") {
  write(scratch("n2.jsonl"), three_nodes());
  write(scratch("e2.tsv"), "a\tb\nb\ta\n");
  auto g = load_dataset(scratch("n2.jsonl"), scratch("e2.tsv"));
  CHECK(g.num_edges() == 1);
  CHECK(g.num_directed_entries() == 2);
}

TEST_CASE("load_dataset rejects unknown endpoints") {
  write(scratch("n3.jsonl"), three_nodes());
  write(scratch("e3.tsv"), "a\t99\n");
  CHECK_THROWS_AS(load_dataset(scratch("n3.jsonl"), scratch("e3.tsv")), ReferentialError);
}

TEST_CASE("load_dataset reports malformed lines and duplicates") {
  write(scratch("n4.jsonl"), "{\"id\":\"a\",\"text\":\"x\",\"label\":0}\n{not json\n");
  write(scratch("e4.tsv"), "");
  try {
    load_dataset(scratch("n4.jsonl"), scratch("e4.tsv"));
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  write(scratch("n5.jsonl"), "{\"id\":\"a\",\"text\":\"x\",\"label\":0}\n{\"id\":\"a\",\"text\":\"y\",\"label\":0}\n");
  CHECK_THROWS_AS(load_dataset(scratch("n5.jsonl"), scratch("e4.tsv")), DuplicationError);
  CHECK_THROWS_AS(load_dataset(scratch("missing.jsonl"), scratch("e4.tsv")), IoError);
}

TEST_CASE("save_dataset round-trips through load_dataset") {
  auto g = generate_synthetic(SyntheticSpec{2, 10, 0.3, 0.05, 5, 5, 6, 9});
  save_dataset(g, scratch("rt.jsonl"), scratch("rt.tsv"));
  auto back = load_dataset(scratch("rt.jsonl"), scratch("rt.tsv"));
  CHECK(back.texts == g.texts);
  CHECK(back.labels == g.labels);
  CHECK(back.same_topology(g));
}

TEST_CASE("make_split counts on 100 nodes") {
  auto s = make_split(100, SplitFractions{}, 5);
  CHECK(s.count(Role::test_clean) == 10);
  CHECK(s.count(Role::test_target) == 10);
  CHECK(s.count(Role::labeled_train) == 8);
  CHECK(s.count(Role::validation) == 8);
  CHECK(s.count(Role::unlabeled_train) == 64);
}

TEST_CASE("make_split is deterministic and validates fractions") {
  CHECK(make_split(100, SplitFractions{}, 7).roles == make_split(100, SplitFractions{}, 7).roles);
  CHECK(make_split(100, SplitFractions{}, 7).roles != make_split(100, SplitFractions{}, 8).roles);
  CHECK_THROWS_AS(make_split(100, SplitFractions{1.2, 0.1, 0.1}, 0), ConfigError);
  CHECK_THROWS_AS(make_split(100, SplitFractions{0.5, 0.3, 0.3}, 0), ConfigError);
}

TEST_CASE("induced_training_graph drops test nodes") {
  SECTION("path with the tail in test") {
    auto g = make_graph(3, {{0, 1}, {1, 2}});
    SplitAssignment s{{Role::labeled_train, Role::unlabeled_train, Role::test_target}};
    auto ind = induced_training_graph(g, s);
    CHECK(ind.graph.num_nodes == 2);
    CHECK(ind.graph.num_edges() == 1);
    CHECK(ind.to_original == std::vector<NodeId>{0, 1});
    CHECK(ind.to_local[2] == kDropped);
  }
  SECTION("no test nodes gives the same graph") {
    auto g = make_graph(3, {{0, 1}, {1, 2}});
    SplitAssignment s{{Role::labeled_train, Role::validation, Role::unlabeled_train}};
    auto ind = induced_training_graph(g, s);
    CHECK(ind.graph.same_topology(g));
    CHECK(ind.to_original == std::vector<NodeId>{0, 1, 2});
  }
  SECTION("star with the center in test") {
    auto g = make_graph(4, {{0, 1}, {0, 2}, {0, 3}});
    SplitAssignment s{{Role::test_clean, Role::labeled_train, Role::labeled_train, Role::validation}};
    auto ind = induced_training_graph(g, s);
    CHECK(ind.graph.num_nodes == 3);
    CHECK(ind.graph.num_edges() == 0);
  }
}

TEST_CASE("generate_synthetic is deterministic") {
  SyntheticSpec spec;
  spec.seed = 4;
  auto a = generate_synthetic(spec), b = generate_synthetic(spec);
  CHECK(a.texts == b.texts);
  CHECK(a.neighbors == b.neighbors);
  CHECK(adjacency_checksum(a) == adjacency_checksum(b));
  spec.seed = 5;
  CHECK(adjacency_checksum(generate_synthetic(spec)) != adjacency_checksum(a));
  check_invariants(a);
}

TEST_CASE("p_inter = 0 keeps edges inside classes") {
  SyntheticSpec spec;
  spec.p_inter = 0.0;
  auto g = generate_synthetic(spec);
  CHECK(g.num_edges() > 0);
  for (auto [u, v] : g.edge_list()) CHECK(g.labels[u] == g.labels[v]);
}

TEST_CASE("synthetic spec validation") {
  SyntheticSpec s;
  s.p_intra = 0.001;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = SyntheticSpec{};
  s.num_classes = 0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("synthetic words are distinct") {
  std::set<std::string> seen;
  for (std::size_t i = 0; i < 500; ++i) {
    auto w = synthetic_word(i);
    CHECK(w.size() >= 4);
    seen.insert(w);
  }
  CHECK(seen.size() == 500);
}

TEST_CASE("normalized_adjacency closed forms") {
  auto two = normalized_adjacency(make_graph(2, {{0, 1}}));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) CHECK(two.at(i, j) == Approx(0.5));

  auto one = normalized_adjacency(make_graph(1, {}));
  CHECK(one.at(0, 0) == 1.0);

  auto path = normalized_adjacency(make_graph(3, {{0, 1}, {1, 2}}));
  CHECK(path.at(0, 1) == Approx(1.0 / std::sqrt(6.0)).epsilon(1e-12));
  CHECK(path.at(0, 2) == 0.0);
  CHECK(path.at(1, 1) == Approx(1.0 / 3.0));
  for (std::size_t r = 0; r < 3; ++r)
    CHECK(std::is_sorted(path.indices.begin() + path.offsets[r], path.indices.begin() + path.offsets[r + 1]));
}

TEST_CASE("mean_adjacency rows average neighbours") {
  auto m = mean_adjacency(make_graph(3, {{0, 1}, {0, 2}}));
  CHECK(m.at(0, 1) == Approx(0.5));
  CHECK(m.at(1, 0) == 1.0);
  auto iso = mean_adjacency(make_graph(1, {}));
  CHECK(iso.offsets[1] == 0);
}

TEST_CASE("assign_edges drops self loops") {
  auto g = make_graph(2, {{0, 0}, {0, 1}});
  CHECK(g.num_edges() == 1);
  CHECK_FALSE(g.has_edge(0, 0));
}
