#include <catch_amalgamated.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "tagbd/attack.hpp"

using namespace tagbd;
using Catch::Approx;

namespace {

std::vector<UncertaintyScore> scores_of(std::vector<double> entropies) {
  std::vector<UncertaintyScore> out;
  for (NodeId i = 0; i < entropies.size(); ++i) out.push_back({i, entropies[i]});
  return out;
}

std::size_t classes_in(std::span<const NodeId> nodes, std::span<const int> labels) {
  std::set<int> s;
  for (auto n : nodes) s.insert(labels[n]);
  return s.size();
}

struct Small {
  TextAttributedGraph graph;
  SplitAssignment split;
  InducedGraph induced;
  Vocabulary vocab;
  Tensor features;
  GraphOperators ops;
  std::vector<NodeId> labeled, validation, unlabeled;
};

Small small_fixture() {
  Small s;
  s.graph = generate_synthetic(SyntheticSpec{3, 30, 0.15, 0.01, 10, 10, 12, 3});
  s.split = make_split(s.graph, SplitFractions{}, 4);
  s.induced = induced_training_graph(s.graph, s.split);
  s.vocab = build_vocab(s.induced.graph.texts);
  s.features = encode_texts(s.induced.graph.texts, s.vocab);
  s.ops = GraphOperators::from(s.induced.graph);
  s.labeled = s.induced.split.ids(Role::labeled_train);
  s.validation = s.induced.split.ids(Role::validation);
  s.unlabeled = s.induced.split.ids(Role::unlabeled_train);
  return s;
}

OptimizerConfig quick() {
  OptimizerConfig c;
  c.max_epochs = 40;
  c.patience = 40;
  return c;
}

}  // namespace

TEST_CASE("coverage repair swaps the lowest-ranked duplicate") {
  const std::vector<int> labels{0, 0, 0, 1, 1};
  auto scores = scores_of({0.9, 0.8, 0.7, 0.2, 0.1});
  auto sel = select_top_k(scores, labels, 0.6, 2);
  CHECK(sel.nodes == std::vector<NodeId>{0, 1, 3});
  CHECK(sel.classes_covered == 2);
  CHECK(select_top_k(scores, labels, 0.6, 1).nodes == std::vector<NodeId>{0, 1, 2});
}

TEST_CASE("entropy ties break by node id") {
  const std::vector<int> labels{0, 0, 0, 0};
  auto sel = select_top_k(scores_of({0.5, 0.7, 0.5, 0.5}), labels, 0.5, 1);
  CHECK(sel.nodes == std::vector<NodeId>{0, 1});
}

TEST_CASE("selection warnings") {
  const std::vector<int> labels{0, 0, 1};
  auto tiny = select_top_k(scores_of({0.1, 0.2, 0.3}), labels, 0.1, 1);
  CHECK(tiny.nodes.size() == 1);
  REQUIRE_FALSE(tiny.warnings.empty());
  CHECK(tiny.warnings.front().find("raised to 1") != std::string::npos);

  auto clipped = select_top_k(scores_of({0.1, 0.2, 0.3}), labels, 0.67, 5);
  CHECK(clipped.classes_covered == 2);
  CHECK_FALSE(clipped.warnings.empty());

  auto infeasible = select_top_k(scores_of({0.1, 0.2, 0.3}), labels, 0.34, 2);
  CHECK(infeasible.nodes.size() == 1);
  CHECK_FALSE(infeasible.warnings.empty());
}

TEST_CASE("exhaustive selection oracle on instances up to ten nodes") {
  Rng rng(2024);
  const std::vector<double> levels{0.0, 0.3, 0.3, 0.6, 0.9, 1.1};  // repeated level forces ties
  std::size_t instances = 0;
  for (std::size_t n = 1; n <= 10; ++n) {
    for (int trial = 0; trial < 150; ++trial) {
      const std::size_t num_classes = 1 + rng.index(4);
      std::vector<int> labels(n);
      std::vector<double> ent(n);
      for (std::size_t i = 0; i < n; ++i) {
        labels[i] = static_cast<int>(rng.index(num_classes));
        ent[i] = levels[rng.index(levels.size())];
      }
      const double fraction = rng.uniform(0.05, 0.95);
      const std::size_t gamma = 1 + rng.index(num_classes);
      const auto scores = scores_of(ent);
      const auto sel = select_top_k(scores, labels, fraction, gamma);
      const std::size_t budget = poison_budget(fraction, n);
      ++instances;

      // budget exactly, no duplicates, ascending
      REQUIRE(sel.nodes.size() == budget);
      REQUIRE(std::is_sorted(sel.nodes.begin(), sel.nodes.end()));
      REQUIRE(std::adjacent_find(sel.nodes.begin(), sel.nodes.end()) == sel.nodes.end());

      // best coverage over every subset of the budget size
      std::size_t best = 0;
      for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
        if (static_cast<std::size_t>(std::popcount(mask)) != budget) continue;
        std::vector<NodeId> subset;
        for (NodeId i = 0; i < n; ++i)
          if (mask & (1u << i)) subset.push_back(i);
        best = std::max(best, classes_in(subset, labels));
      }
      const std::size_t required = std::min(gamma, best);
      REQUIRE(classes_in(sel.nodes, labels) >= required);
      REQUIRE(sel.classes_covered == classes_in(sel.nodes, labels));

      // without a coverage demand the result is the plain ranked prefix
      if (gamma == 1) {
        std::vector<NodeId> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(),
                  [&](NodeId a, NodeId b) { return ent[a] != ent[b] ? ent[a] > ent[b] : a < b; });
        std::vector<NodeId> prefix(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(budget));
        std::sort(prefix.begin(), prefix.end());
        REQUIRE(sel.nodes == prefix);
      }
    }
  }
  CHECK(instances == 1500);
}

TEST_CASE("random selection is seeded") {
  std::vector<NodeId> pool{3, 5, 7, 9, 11, 13};
  std::vector<int> labels(14, 0);
  labels[9] = 1;
  auto a = select_random(pool, labels, 0.5, 2, 1);
  CHECK(a.nodes == select_random(pool, labels, 0.5, 2, 1).nodes);
  CHECK(a.nodes.size() == 3);
  CHECK(a.classes_covered == 2);
}

TEST_CASE("uncertainty scores follow the softmax") {
  Tensor logits(3, 3, std::vector<double>{1000, 0, 0, 2, 2, 2, 0.3, -1.2, 0.8});
  std::vector<NodeId> nodes{0, 1, 2};
  auto s = uncertainty_from_logits(logits, nodes);
  CHECK(s[0].entropy == Approx(0.0).margin(1e-12));
  CHECK(s[1].entropy == Approx(std::log(3.0)).epsilon(1e-12));
  const double z = std::exp(0.3) + std::exp(-1.2) + std::exp(0.8);
  double h = 0.0;
  for (double l : {0.3, -1.2, 0.8}) h -= (std::exp(l) / z) * std::log(std::exp(l) / z);
  CHECK(std::abs(s[2].entropy - h) < 1e-12);
}

TEST_CASE("inject modes") {
  CHECK(inject("abstract text", "zz qq", InjectionMode::overwrite) == "zz qq");
  CHECK(inject("abstract text", "zz qq", InjectionMode::append) == "abstract text zz qq");
  CHECK(inject("abstract text", "", InjectionMode::append) == "abstract text");
  CHECK(parse_mode("append") == InjectionMode::append);
  CHECK_THROWS_AS(parse_mode("prepend"), ConfigError);
}

TEST_CASE("attack config validation") {
  AttackConfig c;
  CHECK_NOTHROW(c.validate(3));
  CHECK(c.trigger_tokens() == kOverwriteTriggerTokens);
  c.mode = InjectionMode::append;
  CHECK(c.trigger_tokens() == kAppendTriggerTokens);
  c.target_label = 3;
  CHECK_THROWS_AS(c.validate(3), ConfigError);
  c.target_label = 0;
  c.budget_fraction = 0.0;
  CHECK_THROWS_AS(c.validate(3), ConfigError);
  c.budget_fraction = 0.1;
  c.coverage = 4;
  CHECK_THROWS_AS(c.validate(3), ConfigError);
}

TEST_CASE("plans, poisoned graphs and test-time triggers") {
  auto s = small_fixture();
  const auto& g = s.induced.graph;
  Rng rng(1);
  auto sur = train_node_classifier(GcnModel::init(s.vocab.size(), 16, 3, rng), s.ops, s.features, g.labels,
                                   s.labeled, s.validation, quick(), 2)
                 .model;
  CHECK(gcn_hidden(sur, s.ops, s.features).rows() == g.num_nodes);

  AttackConfig cfg;
  cfg.budget_fraction = 0.1;
  cfg.max_trigger_tokens = 6;
  cfg.joint_epochs = 15;
  auto sel = select_top_k(score_uncertainty(sur, s.ops, s.features, s.unlabeled), g.labels, cfg.budget_fraction, 3);
  auto gen = MlpGenerator::init(16, 24, s.vocab.size(), rng);
  auto joint = joint_train(sur, gen, s.ops, s.features, g.labels, s.labeled, sel.nodes, s.vocab, cfg, quick(), 5);
  auto joint2 = joint_train(sur, gen, s.ops, s.features, g.labels, s.labeled, sel.nodes, s.vocab, cfg, quick(), 5);
  CHECK(joint.generator.w1 == joint2.generator.w1);
  CHECK(joint.shadow.w2 == joint2.shadow.w2);
  CHECK(joint.epochs_run == 15);

  auto inputs = generator_inputs(joint.shadow, s.ops, s.features, sel.nodes, cfg.generator_input);
  auto batch = generate_trigger(joint.generator, inputs, s.vocab, *cfg.max_trigger_tokens);
  CHECK(generate_trigger(joint.generator, inputs, s.vocab, 6).texts == batch.texts);
  for (auto& t : batch.texts) CHECK(tokenize(t).size() <= 6);

  SECTION("overwrite plan") {
    auto plan = remap_plan(make_plan(sel.nodes, g.texts, g.labels, batch.embeddings, s.vocab, cfg), s.induced.to_original);
    auto poisoned = build_poisoned_graph(s.graph, plan);
    CHECK(adjacency_checksum(poisoned) == adjacency_checksum(s.graph));
    std::size_t changed = 0;
    for (NodeId u = 0; u < s.graph.num_nodes; ++u) changed += poisoned.texts[u] != s.graph.texts[u];
    CHECK(changed == plan.nodes.size());
    for (auto& n : plan.nodes) {
      CHECK(poisoned.labels[n.node] == cfg.target_label);
      CHECK(n.original_text == s.graph.texts[n.node]);
      CHECK(n.poisoned_text == n.trigger_text);
    }
    std::ostringstream out;
    export_plan(plan, out);
    std::istringstream lines(out.str());
    std::string line;
    std::size_t count = 0;
    while (std::getline(lines, line)) {
      auto j = nlohmann::json::parse(line);
      CHECK(j.at("mode") == "overwrite");
      CHECK(j.contains("cosine_to_original"));
      ++count;
    }
    CHECK(count == plan.nodes.size());
    CHECK(plan.delta_violations(std::nullopt) == 0);
    CHECK(plan.delta_violations(1.01) == plan.nodes.size());
  }

  SECTION("append plan and test-time triggering") {
    cfg.mode = InjectionMode::append;
    auto plan = make_plan(sel.nodes, g.texts, g.labels, batch.embeddings, s.vocab, cfg);
    for (auto& n : plan.nodes) CHECK(n.poisoned_text.starts_with(n.original_text));

    auto full_ops = GraphOperators::from(s.graph);
    auto full_x = encode_texts(s.graph.texts, s.vocab);
    auto targets = s.split.ids(Role::test_target);
    auto a = apply_trigger_at_test(joint.generator, sur, full_ops, full_x, s.graph.texts, targets, s.vocab, cfg);
    auto b = apply_trigger_at_test(joint.generator, sur, full_ops, full_x, s.graph.texts, targets, s.vocab, cfg);
    CHECK(a.texts == b.texts);
    CHECK(a.features == b.features);
    for (std::size_t r = 0; r < targets.size(); ++r) CHECK(a.texts[r].starts_with(s.graph.texts[targets[r]]));
  }

  SECTION("empty plan leaves the graph unchanged") {
    PoisonPlan empty;
    auto same = build_poisoned_graph(s.graph, empty);
    CHECK(same.texts == s.graph.texts);
    CHECK(same.labels == s.graph.labels);
    PoisonPlan bad;
    bad.nodes.push_back(PoisonedNode{s.graph.num_nodes + 4});
    CHECK_THROWS_AS(build_poisoned_graph(s.graph, bad), ReferentialError);
  }
}

TEST_CASE("joint objective settles on a frozen-shadow schedule") {
  auto s = small_fixture();
  const auto& g = s.induced.graph;
  Rng rng(3);
  auto sur = train_node_classifier(GcnModel::init(s.vocab.size(), 16, 3, rng), s.ops, s.features, g.labels,
                                   s.labeled, s.validation, quick(), 4)
                 .model;
  AttackConfig cfg;
  cfg.budget_fraction = 0.1;
  cfg.joint_epochs = 60;
  cfg.roundtrip_period = 0;
  auto sel = select_top_k(score_uncertainty(sur, s.ops, s.features, s.unlabeled), g.labels, cfg.budget_fraction, 3);
  auto gen = MlpGenerator::init(16, 24, s.vocab.size(), rng);
  OptimizerConfig opt = quick();
  opt.patience = 100;
  auto res = joint_train(sur, gen, s.ops, s.features, g.labels, s.labeled, sel.nodes, s.vocab, cfg, opt, 6);
  REQUIRE(res.objective.size() == 60);
  for (std::size_t e = 0; e + 10 < res.objective.size(); ++e) CHECK(res.objective[e + 10] <= 1.05 * res.objective[e]);
  CHECK(res.objective.back() < res.objective.front());
}

TEST_CASE("a large similarity weight keeps triggers close to the original text") {
  auto s = small_fixture();
  const auto& g = s.induced.graph;
  Rng rng(5);
  auto sur = train_node_classifier(GcnModel::init(s.vocab.size(), 32, 3, rng), s.ops, s.features, g.labels,
                                   s.labeled, s.validation, quick(), 6)
                 .model;
  AttackConfig cfg;
  cfg.budget_fraction = 0.1;
  cfg.lambda = 100.0;
  cfg.joint_epochs = 200;
  cfg.roundtrip_period = 0;
  auto sel = select_top_k(score_uncertainty(sur, s.ops, s.features, s.unlabeled), g.labels, cfg.budget_fraction, 3);
  auto gen = MlpGenerator::init(32, 64, s.vocab.size(), rng);
  OptimizerConfig opt;
  opt.patience = 200;
  auto res = joint_train(sur, gen, s.ops, s.features, g.labels, s.labeled, sel.nodes, s.vocab, cfg, opt, 7);
  auto trig = generate_embeddings(res.generator, generator_inputs(res.shadow, s.ops, s.features, sel.nodes, cfg.generator_input));
  double mean = 0.0;
  for (std::size_t r = 0; r < sel.nodes.size(); ++r) {
    auto x = s.features.row(sel.nodes[r]);
    mean += kernel::dot(x, trig.row(r)) / (kernel::norm(x) * kernel::norm(trig.row(r)));
  }
  mean /= static_cast<double>(sel.nodes.size());
  CHECK(mean >= 0.99);
}
