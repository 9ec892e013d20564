#include <catch_amalgamated.hpp>

#include <cmath>

#include "tagbd/metrics.hpp"

using namespace tagbd;
using Catch::Approx;

TEST_CASE("attack success rate") {
  const std::vector<int> labels{1, 2, 1, 2, 0};
  const std::vector<NodeId> targets{0, 1, 2, 3, 4};
  auto all = compute_asr(std::vector<int>{0, 0, 0, 0, 0}, targets, 0, labels);
  CHECK(all.value == 1.0);
  CHECK(all.total == 4);
  CHECK(all.targets == 5);
  CHECK(compute_asr(std::vector<int>{1, 2, 1, 2, 0}, targets, 0, labels).value == 0.0);
  CHECK(compute_asr(std::vector<int>{0, 0, 0, 1, 0}, targets, 0, labels).value == 0.75);
  CHECK_THROWS_AS(compute_asr(std::vector<int>{0, 0, 0, 0, 0}, std::vector<NodeId>{4}, 0, labels),
                  UndefinedMetricError);
}

TEST_CASE("clean accuracy matches a confusion-matrix recount") {
  Rng rng(12);
  std::vector<int> labels(200), pred(200);
  std::vector<NodeId> ids;
  for (NodeId i = 0; i < 200; ++i) {
    labels[i] = static_cast<int>(rng.index(3));
    pred[i] = rng.uniform() < 0.7 ? labels[i] : static_cast<int>(rng.index(3));
    if (i % 3 == 0) ids.push_back(i);
  }
  std::size_t confusion[3][3] = {};
  for (auto i : ids) ++confusion[labels[i]][pred[i]];
  const double diag = static_cast<double>(confusion[0][0] + confusion[1][1] + confusion[2][2]);
  CHECK(compute_ca(pred, ids, labels).value == Approx(diag / static_cast<double>(ids.size())).epsilon(1e-15));

  std::vector<int> balanced, constant;
  std::vector<NodeId> all;
  for (NodeId i = 0; i < 300; ++i) {
    balanced.push_back(static_cast<int>(i % 3));
    constant.push_back(1);
    all.push_back(i);
  }
  CHECK(compute_ca(constant, all, balanced).value == Approx(1.0 / 3.0));
  CHECK_THROWS_AS(compute_ca(constant, std::vector<NodeId>{}, balanced), UndefinedMetricError);
}

TEST_CASE("stealth statistics") {
  const std::vector<std::string> corpus{"alpha beta gamma alpha", "beta gamma delta", "gamma alpha beta"};
  auto lm = train_bigram_lm(corpus, 1.0);

  auto same = compute_stealth_stats(lm, corpus, corpus);
  CHECK(same.poisoned.ppl_mean == same.clean.ppl_mean);
  CHECK(same.poisoned.len_mean == same.clean.len_mean);

  const std::vector<std::string> texts{"alpha beta", "gamma", "delta alpha zeta", ""};
  auto s = text_set_stats(lm, texts);
  CHECK(s.count == 4);
  CHECK(s.scored == 2);
  CHECK(s.skipped == 2);
  CHECK(s.len_mean == Approx(6.0 / 4.0));

  // direct recomputation from the smoothed bigram probabilities
  auto ppl = [&](std::vector<std::string> toks) {
    double ll = 0.0;
    for (std::size_t i = 1; i < toks.size(); ++i) ll += std::log(lm.probability(toks[i - 1], toks[i]));
    return std::exp(-ll / static_cast<double>(toks.size() - 1));
  };
  const double expected = (ppl({"alpha", "beta"}) + ppl({"delta", "alpha", "zeta"})) / 2.0;
  CHECK(std::abs(s.ppl_mean - expected) < 1e-9);

  CHECK_THROWS_AS(text_set_stats(lm, std::vector<std::string>{"one", ""}), UndefinedMetricError);
}
