#pragma once

// Pre-training defenses: similarity-based edge pruning and k-NN cosine outlier filtering.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "tagbd/errors.hpp"
#include "tagbd/graph.hpp"
#include "tagbd/tensor.hpp"

namespace tagbd {

enum class ThresholdMode { absolute, percentile };

struct PruneConfig {
  ThresholdMode mode = ThresholdMode::percentile;
  double value = 0.05;

  void validate() const {
    if (mode == ThresholdMode::percentile && !(value >= 0.0 && value < 1.0))
      throw ConfigError("prune.value must lie in [0, 1) in percentile mode");
    if (mode == ThresholdMode::absolute && !std::isfinite(value)) throw ConfigError("prune.value must be finite");
  }
};

struct OdConfig {
  std::size_t k = 10;
  double fraction = 0.05;

  void validate() const {
    if (k < 1) throw ConfigError("od.k must be >= 1");
    if (!(fraction > 0.0 && fraction < 0.5)) throw ConfigError("od.fraction must lie in (0, 0.5)");
  }
};

inline double row_cosine(const Tensor& m, std::size_t a, std::size_t b) {
  const double na = kernel::norm(m.row(a)), nb = kernel::norm(m.row(b));
  if (!(na > 0.0 && nb > 0.0)) return 0.0;
  return kernel::dot(m.row(a), m.row(b)) / (na * nb);
}

struct RemovedEdge {
  std::size_t edge_id;
  NodeId source;
  NodeId target;
  double similarity;
};

struct PruneResult {
  TextAttributedGraph graph;
  std::vector<RemovedEdge> removed;  // ascending edge id
};

/// Removes edges whose endpoint cosine similarity is below `value` (absolute mode) or the
/// floor(value * |E|) least similar edges (percentile mode; ties by edge id).
inline PruneResult prune_edges(const TextAttributedGraph& graph, const Tensor& embeddings, const PruneConfig& cfg) {
  cfg.validate();
  if (embeddings.rows() != graph.num_nodes) throw ShapeError("prune: one embedding row per node required");
  const auto edges = graph.edge_list();
  std::vector<double> sim(edges.size());
  for (std::size_t e = 0; e < edges.size(); ++e) sim[e] = row_cosine(embeddings, edges[e].first, edges[e].second);

  std::vector<bool> drop(edges.size(), false);
  if (cfg.mode == ThresholdMode::absolute) {
    for (std::size_t e = 0; e < edges.size(); ++e) drop[e] = sim[e] < cfg.value;
  } else {
    std::vector<std::size_t> order(edges.size());
    for (std::size_t e = 0; e < order.size(); ++e) order[e] = e;
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return sim[a] < sim[b]; });
    const auto n = static_cast<std::size_t>(std::floor(cfg.value * static_cast<double>(edges.size()) + 1e-9));
    for (std::size_t r = 0; r < n; ++r) drop[order[r]] = true;
  }

  PruneResult out;
  std::vector<std::pair<NodeId, NodeId>> kept;
  for (std::size_t e = 0; e < edges.size(); ++e) {
    if (drop[e])
      out.removed.push_back({e, edges[e].first, edges[e].second, sim[e]});
    else
      kept.push_back(edges[e]);
  }
  out.graph = graph;
  assign_edges(out.graph, kept);
  return out;
}

struct OutlierScore {
  NodeId node;
  double score;
};

struct OutlierResult {
  std::vector<NodeId> flagged;       // ascending
  std::vector<OutlierScore> scores;  // one per candidate, candidate order
};

/// Scores each candidate by its mean cosine distance to the k nearest other candidates and
/// flags the ceil(fraction * |candidates|) highest scores (ties by node id).
inline OutlierResult detect_outliers(const Tensor& embeddings, std::span<const NodeId> candidates, const OdConfig& cfg) {
  cfg.validate();
  if (candidates.size() < cfg.k + 1)
    throw Error("outlier detection needs at least k + 1 = " + std::to_string(cfg.k + 1) + " candidate nodes");
  OutlierResult out;
  std::vector<double> dist;
  for (auto u : candidates) {
    dist.clear();
    for (auto v : candidates)
      if (v != u) dist.push_back(1.0 - row_cosine(embeddings, u, v));
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(cfg.k), dist.end());
    double s = 0.0;
    for (std::size_t i = 0; i < cfg.k; ++i) s += dist[i];
    out.scores.push_back({u, s / static_cast<double>(cfg.k)});
  }
  auto ranked = out.scores;
  std::sort(ranked.begin(), ranked.end(),
            [](const auto& a, const auto& b) { return a.score != b.score ? a.score > b.score : a.node < b.node; });
  const auto n = static_cast<std::size_t>(std::ceil(cfg.fraction * static_cast<double>(candidates.size()) - 1e-9));
  for (std::size_t r = 0; r < n && r < ranked.size(); ++r) out.flagged.push_back(ranked[r].node);
  std::sort(out.flagged.begin(), out.flagged.end());
  return out;
}

/// One JSON object per line: removed edges, then flagged nodes with their scores.
inline void export_defense_audit(std::span<const RemovedEdge> removed, const OutlierResult* outliers, std::ostream& out) {
  for (const auto& e : removed) {
    nlohmann::ordered_json rec;
    rec["kind"] = "removed_edge";
    rec["edge_id"] = e.edge_id;
    rec["source"] = e.source;
    rec["target"] = e.target;
    rec["similarity"] = e.similarity;
    out << rec.dump() << '\n';
  }
  if (!outliers) return;
  for (auto node : outliers->flagged) {
    auto it = std::find_if(outliers->scores.begin(), outliers->scores.end(), [&](auto& s) { return s.node == node; });
    nlohmann::ordered_json rec;
    rec["kind"] = "flagged_node";
    rec["node_id"] = node;
    rec["score"] = it->score;
    out << rec.dump() << '\n';
  }
}

}  // namespace tagbd
