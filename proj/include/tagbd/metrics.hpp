#pragma once

// Attack success rate, clean accuracy and text stealth statistics.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tagbd/errors.hpp"
#include "tagbd/graph.hpp"
#include "tagbd/nn.hpp"
#include "tagbd/text.hpp"

namespace tagbd {

struct Rate {
  std::size_t hits = 0;
  std::size_t total = 0;
  double value = 0.0;
};

struct AsrResult : Rate {
  std::size_t targets = 0;  // test-target nodes before excluding those already labeled y_t
};

/// Fraction of test-target nodes predicted `target_label`, over those whose true label differs.
inline AsrResult compute_asr(std::span<const int> predictions, std::span<const NodeId> targets, int target_label,
                             std::span<const int> labels) {
  AsrResult r;
  r.targets = targets.size();
  for (auto i : targets) {
    if (labels[i] == target_label) continue;
    ++r.total;
    r.hits += predictions[i] == target_label;
  }
  if (r.total == 0) throw UndefinedMetricError("ASR: no test-target node has a label other than the target class");
  r.value = static_cast<double>(r.hits) / static_cast<double>(r.total);
  return r;
}

/// Evaluates `model` on the full graph with the triggered rows already substituted.
template <class Model>
AsrResult compute_asr(const Model& model, const GraphOperators& graph, const Tensor& triggered_features,
                      std::span<const NodeId> targets, int target_label, std::span<const int> labels) {
  return compute_asr(predict(model, graph, triggered_features), targets, target_label, labels);
}

inline Rate compute_ca(std::span<const int> predictions, std::span<const NodeId> test_ids, std::span<const int> labels) {
  if (test_ids.empty()) throw UndefinedMetricError("CA: empty clean test set");
  Rate r;
  r.total = test_ids.size();
  for (auto i : test_ids) r.hits += predictions[i] == labels[i];
  r.value = static_cast<double>(r.hits) / static_cast<double>(r.total);
  return r;
}

template <class Model>
Rate compute_ca(const Model& model, const GraphOperators& graph, const Tensor& features,
                std::span<const NodeId> test_ids, std::span<const int> labels) {
  return compute_ca(predict(model, graph, features), test_ids, labels);
}

struct TextSetStats {
  double ppl_mean = 0.0;
  double len_mean = 0.0;
  std::size_t count = 0;    // texts in the set
  std::size_t scored = 0;   // texts contributing to ppl_mean
  std::size_t skipped = 0;  // texts with fewer than two tokens
};

struct StealthStats {
  TextSetStats poisoned;
  TextSetStats clean;
};

/// Mean perplexity over texts with at least two tokens; mean token count over every text.
inline TextSetStats text_set_stats(const BigramLm& lm, std::span<const std::string> texts) {
  TextSetStats s;
  s.count = texts.size();
  double ppl = 0.0, len = 0.0;
  for (const auto& text : texts) {
    const auto n = tokenize(text).size();
    len += static_cast<double>(n);
    if (n < 2) {
      ++s.skipped;
      continue;
    }
    ppl += perplexity(lm, text);
    ++s.scored;
  }
  if (s.scored == 0) throw UndefinedMetricError("stealth: every text has fewer than two tokens");
  s.ppl_mean = ppl / static_cast<double>(s.scored);
  s.len_mean = len / static_cast<double>(s.count);
  return s;
}

inline StealthStats compute_stealth_stats(const BigramLm& lm, std::span<const std::string> poisoned,
                                          std::span<const std::string> clean) {
  return {text_set_stats(lm, poisoned), text_set_stats(lm, clean)};
}

}  // namespace tagbd
