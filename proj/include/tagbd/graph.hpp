#pragma once

// Text-attributed graph model, ingestion, inductive splits, synthetic fixtures and
// adjacency operators.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tagbd/errors.hpp"
#include "tagbd/rng.hpp"

namespace tagbd {

using NodeId = std::size_t;

/// Undirected graph with per-node text and class label. Adjacency is stored in
/// compressed sparse form with both directions of every edge, sorted per node.
struct TextAttributedGraph {
  std::size_t num_nodes = 0;
  std::size_t num_classes = 0;
  std::vector<std::size_t> offsets{0};
  std::vector<NodeId> neighbors;
  std::vector<std::string> texts;
  std::vector<int> labels;

  std::span<const NodeId> adjacent(NodeId u) const {
    return {neighbors.data() + offsets[u], offsets[u + 1] - offsets[u]};
  }
  std::size_t degree(NodeId u) const { return offsets[u + 1] - offsets[u]; }
  std::size_t num_directed_entries() const { return neighbors.size(); }
  std::size_t num_edges() const { return neighbors.size() / 2; }

  bool has_edge(NodeId u, NodeId v) const {
    auto adj = adjacent(u);
    return std::binary_search(adj.begin(), adj.end(), v);
  }

  /// Undirected edges as (u, v) with u < v, ordered by u then v. The position in this
  /// list is the edge id used by defenses.
  std::vector<std::pair<NodeId, NodeId>> edge_list() const {
    std::vector<std::pair<NodeId, NodeId>> out;
    out.reserve(num_edges());
    for (NodeId u = 0; u < num_nodes; ++u)
      for (NodeId v : adjacent(u))
        if (u < v) out.emplace_back(u, v);
    return out;
  }

  bool same_topology(const TextAttributedGraph& other) const {
    return num_nodes == other.num_nodes && offsets == other.offsets && neighbors == other.neighbors;
  }
};

/// FNV-1a over the adjacency arrays.
inline std::uint64_t adjacency_checksum(const TextAttributedGraph& g) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  };
  mix(g.num_nodes);
  for (auto o : g.offsets) mix(o);
  for (auto n : g.neighbors) mix(n);
  return h;
}

/// Throws Error describing the first violated structural invariant.
inline void check_invariants(const TextAttributedGraph& g) {
  if (g.offsets.size() != g.num_nodes + 1) throw Error("graph: offset array has wrong length");
  if (g.offsets.front() != 0) throw Error("graph: first offset must be 0");
  if (g.offsets.back() != g.neighbors.size())
    throw Error("graph: last offset must equal neighbor entry count");
  for (std::size_t i = 0; i < g.num_nodes; ++i)
    if (g.offsets[i] > g.offsets[i + 1]) throw Error("graph: offsets must be non-decreasing");
  for (NodeId u = 0; u < g.num_nodes; ++u) {
    auto adj = g.adjacent(u);
    for (std::size_t k = 0; k < adj.size(); ++k) {
      NodeId v = adj[k];
      if (v >= g.num_nodes) throw Error("graph: neighbor index out of range");
      if (v == u) throw Error("graph: stored self-loop at node " + std::to_string(u));
      if (k > 0 && adj[k - 1] >= v) throw Error("graph: unsorted or duplicate neighbor entry");
      if (!g.has_edge(v, u)) throw Error("graph: adjacency is not symmetric");
    }
  }
  if (g.texts.size() != g.num_nodes) throw Error("graph: text count differs from node count");
  if (g.labels.size() != g.num_nodes) throw Error("graph: label count differs from node count");
  for (int y : g.labels)
    if (y < 0 || static_cast<std::size_t>(y) >= g.num_classes)
      throw Error("graph: label outside [0, num_classes)");
}

/// Builds the symmetric, deduplicated, self-loop-free adjacency from an undirected edge list.
inline void assign_edges(TextAttributedGraph& g, std::span<const std::pair<NodeId, NodeId>> edges) {
  std::vector<std::vector<NodeId>> adj(g.num_nodes);
  for (auto [u, v] : edges) {
    if (u >= g.num_nodes || v >= g.num_nodes) throw ReferentialError("edge endpoint out of range");
    if (u == v) continue;
    adj[u].push_back(v);
    adj[v].push_back(u);
  }
  g.offsets.assign(1, 0);
  g.neighbors.clear();
  for (auto& list : adj) {
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
    g.neighbors.insert(g.neighbors.end(), list.begin(), list.end());
    g.offsets.push_back(g.neighbors.size());
  }
}

// ---------------------------------------------------------------------------
// Ingestion

namespace detail {

inline std::string trim_line(std::string line) {
  while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
  return line;
}

inline bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

}  // namespace detail

/// Reads a node file (one JSON object per line with `id`, `text`, `label`) and an edge file
/// (`source<TAB>target` per line). Ids are remapped to 0..N-1 in node-file order.
inline TextAttributedGraph load_dataset(const std::string& nodes_path, const std::string& edges_path) {
  std::ifstream nodes_in(nodes_path);
  if (!nodes_in) throw IoError("cannot open node file: " + nodes_path);

  TextAttributedGraph g;
  std::unordered_map<std::string, NodeId> index;
  std::string line;
  std::size_t line_no = 0;
  int max_label = -1;
  while (std::getline(nodes_in, line)) {
    ++line_no;
    line = detail::trim_line(line);
    if (detail::blank(line)) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(nodes_path + ": malformed node record: " + e.what(), line_no);
    }
    if (!rec.is_object() || !rec.contains("id") || !rec.contains("text") || !rec.contains("label") ||
        !rec["id"].is_string() || !rec["text"].is_string() || !rec["label"].is_number_integer())
      throw ParseError(nodes_path + ": node record needs string id, string text, integer label",
                       line_no);
    auto id = rec["id"].get<std::string>();
    auto label = rec["label"].get<long long>();
    if (label < 0 || label > std::numeric_limits<int>::max())
      throw ParseError(nodes_path + ": label must be a non-negative integer", line_no);
    if (!index.emplace(id, g.num_nodes).second)
      throw DuplicationError(nodes_path + ": duplicate node id '" + id + "' (line " +
                             std::to_string(line_no) + ")");
    g.texts.push_back(rec["text"].get<std::string>());
    g.labels.push_back(static_cast<int>(label));
    max_label = std::max(max_label, static_cast<int>(label));
    ++g.num_nodes;
  }
  g.num_classes = static_cast<std::size_t>(max_label + 1);

  std::ifstream edges_in(edges_path);
  if (!edges_in) throw IoError("cannot open edge file: " + edges_path);
  std::vector<std::pair<NodeId, NodeId>> edges;
  line_no = 0;
  while (std::getline(edges_in, line)) {
    ++line_no;
    line = detail::trim_line(line);
    if (detail::blank(line)) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos)
      throw ParseError(edges_path + ": expected source<TAB>target", line_no);
    std::string src = line.substr(0, tab), dst = line.substr(tab + 1);
    auto s = index.find(src), d = index.find(dst);
    if (s == index.end() || d == index.end())
      throw ReferentialError(edges_path + ": edge references unknown node id '" +
                             (s == index.end() ? src : dst) + "' (line " + std::to_string(line_no) + ")");
    edges.emplace_back(s->second, d->second);
  }
  assign_edges(g, edges);
  check_invariants(g);
  return g;
}

/// Writes the graph in the node/edge file format; node ids are the decimal indices.
inline void save_dataset(const TextAttributedGraph& g, const std::string& nodes_path,
                         const std::string& edges_path) {
  std::ofstream nodes_out(nodes_path, std::ios::binary);
  if (!nodes_out) throw IoError("cannot write node file: " + nodes_path);
  for (NodeId u = 0; u < g.num_nodes; ++u) {
    nodes_out << "{\"id\":" << nlohmann::json(std::to_string(u)).dump()
              << ",\"text\":" << nlohmann::json(g.texts[u]).dump() << ",\"label\":" << g.labels[u]
              << "}\n";
  }
  std::ofstream edges_out(edges_path, std::ios::binary);
  if (!edges_out) throw IoError("cannot write edge file: " + edges_path);
  for (auto [u, v] : g.edge_list()) edges_out << u << '\t' << v << '\n';
  if (!nodes_out || !edges_out) throw IoError("write failed for dataset files");
}

// ---------------------------------------------------------------------------
// Splits

enum class Role : std::uint8_t { labeled_train, unlabeled_train, validation, test_clean, test_target };

inline std::string_view role_name(Role r) {
  switch (r) {
    case Role::labeled_train: return "labeled-train";
    case Role::unlabeled_train: return "unlabeled-train";
    case Role::validation: return "validation";
    case Role::test_clean: return "test-clean";
    case Role::test_target: return "test-target";
  }
  return "?";
}

struct SplitFractions {
  double test = 0.20;
  double labeled = 0.10;
  double validation = 0.10;
};

struct SplitAssignment {
  std::vector<Role> roles;

  /// Ascending node ids holding the given role.
  std::vector<NodeId> ids(Role r) const {
    std::vector<NodeId> out;
    for (NodeId i = 0; i < roles.size(); ++i)
      if (roles[i] == r) out.push_back(i);
    return out;
  }
  std::size_t count(Role r) const {
    return static_cast<std::size_t>(std::count(roles.begin(), roles.end(), r));
  }
  bool is_test(NodeId i) const {
    return roles[i] == Role::test_clean || roles[i] == Role::test_target;
  }
};

namespace detail {
inline std::size_t fraction_count(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
}
}  // namespace detail

/// Uniform (unstratified) split. The test share is halved into test-clean and test-target
/// (test-target takes the odd node); labeled and validation shares apply to the remainder.
inline SplitAssignment make_split(std::size_t num_nodes, const SplitFractions& f, std::uint64_t seed) {
  auto in_unit = [](double x) { return x > 0.0 && x < 1.0; };
  if (!in_unit(f.test) || !in_unit(f.labeled) || !in_unit(f.validation))
    throw ConfigError("split fractions must lie in (0, 1)");
  if (f.test + f.labeled + f.validation >= 1.0)
    throw ConfigError("split fractions must sum to less than 1");

  std::vector<NodeId> order(num_nodes);
  for (NodeId i = 0; i < num_nodes; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(std::span<NodeId>(order));

  const std::size_t n_test = detail::fraction_count(f.test, num_nodes);
  const std::size_t n_clean = n_test / 2;
  const std::size_t rest = num_nodes - n_test;
  const std::size_t n_labeled = detail::fraction_count(f.labeled, rest);
  const std::size_t n_val = detail::fraction_count(f.validation, rest);

  SplitAssignment split;
  split.roles.assign(num_nodes, Role::unlabeled_train);
  std::size_t k = 0;
  for (; k < n_clean; ++k) split.roles[order[k]] = Role::test_clean;
  for (; k < n_test; ++k) split.roles[order[k]] = Role::test_target;
  for (; k < n_test + n_labeled; ++k) split.roles[order[k]] = Role::labeled_train;
  for (; k < n_test + n_labeled + n_val; ++k) split.roles[order[k]] = Role::validation;
  return split;
}

inline SplitAssignment make_split(const TextAttributedGraph& g, const SplitFractions& f,
                                  std::uint64_t seed) {
  return make_split(g.num_nodes, f, seed);
}

inline constexpr std::size_t kDropped = std::numeric_limits<std::size_t>::max();

/// Subgraph on the retained nodes with both id maps and the split restricted to it.
struct InducedGraph {
  TextAttributedGraph graph;
  std::vector<NodeId> to_original;   // new id -> original id
  std::vector<std::size_t> to_local; // original id -> new id, or kDropped
  SplitAssignment split;
};

/// Removes every test node (clean and target) with its incident edges.
inline InducedGraph induced_training_graph(const TextAttributedGraph& g, const SplitAssignment& split) {
  if (split.roles.size() != g.num_nodes) throw Error("split size differs from node count");
  InducedGraph out;
  out.to_local.assign(g.num_nodes, kDropped);
  for (NodeId u = 0; u < g.num_nodes; ++u) {
    if (split.is_test(u)) continue;
    out.to_local[u] = out.to_original.size();
    out.to_original.push_back(u);
  }
  auto& sub = out.graph;
  sub.num_nodes = out.to_original.size();
  sub.num_classes = g.num_classes;
  sub.offsets.assign(1, 0);
  for (NodeId old : out.to_original) {
    for (NodeId v : g.adjacent(old))
      if (out.to_local[v] != kDropped) sub.neighbors.push_back(out.to_local[v]);
    sub.offsets.push_back(sub.neighbors.size());
    sub.texts.push_back(g.texts[old]);
    sub.labels.push_back(g.labels[old]);
    out.split.roles.push_back(split.roles[old]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic fixtures

struct SyntheticSpec {
  std::size_t num_classes = 3;
  std::size_t nodes_per_class = 100;
  double p_intra = 0.05;
  double p_inter = 0.005;
  std::size_t class_vocab_size = 30;
  std::size_t shared_vocab_size = 30;
  std::size_t words_per_text = 20;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_classes < 1 || nodes_per_class < 1 || class_vocab_size < 1 || shared_vocab_size < 1 ||
        words_per_text < 1)
      throw ConfigError("synthetic spec: all counts must be >= 1");
    if (!(p_intra >= 0.0 && p_intra <= 1.0 && p_inter >= 0.0 && p_inter <= 1.0))
      throw ConfigError("synthetic spec: probabilities must lie in [0, 1]");
    if (!(p_intra > p_inter)) throw ConfigError("synthetic spec: p_intra must exceed p_inter");
  }
};

inline constexpr double kClassWordShare = 0.8;

/// Deterministic pronounceable token for a word index ("bako", "tiluvo", ...).
inline std::string synthetic_word(std::size_t id) {
  static constexpr std::string_view consonants = "bdfgklmnprstvz";
  static constexpr std::string_view vowels = "aeiou";
  const std::size_t base = consonants.size() * vowels.size();
  std::string w;
  std::size_t x = id;
  do {
    std::size_t syl = x % base;
    w += consonants[syl / vowels.size()];
    w += vowels[syl % vowels.size()];
    x /= base;
  } while (x > 0);
  if (w.size() < 4) w += "ra";  // keep every token at least two syllables
  return w;
}

/// Planted-partition graph whose texts mix class-specific and shared vocabulary.
inline TextAttributedGraph generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  TextAttributedGraph g;
  g.num_classes = spec.num_classes;
  g.num_nodes = spec.num_classes * spec.nodes_per_class;
  for (NodeId u = 0; u < g.num_nodes; ++u) g.labels.push_back(static_cast<int>(u / spec.nodes_per_class));

  std::vector<std::pair<NodeId, NodeId>> edges;
  for (NodeId u = 0; u < g.num_nodes; ++u)
    for (NodeId v = u + 1; v < g.num_nodes; ++v)
      if (rng.bernoulli(g.labels[u] == g.labels[v] ? spec.p_intra : spec.p_inter)) edges.emplace_back(u, v);
  assign_edges(g, edges);

  const std::size_t shared_base = spec.num_classes * spec.class_vocab_size;
  for (NodeId u = 0; u < g.num_nodes; ++u) {
    std::string text;
    for (std::size_t w = 0; w < spec.words_per_text; ++w) {
      std::size_t word;
      if (rng.bernoulli(kClassWordShare))
        word = static_cast<std::size_t>(g.labels[u]) * spec.class_vocab_size + rng.index(spec.class_vocab_size);
      else
        word = shared_base + rng.index(spec.shared_vocab_size);
      if (!text.empty()) text += ' ';
      text += synthetic_word(word);
    }
    g.texts.push_back(std::move(text));
  }
  return g;
}

// ---------------------------------------------------------------------------
// Sparse operators

/// Compressed sparse row matrix with real values.
struct SparseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> offsets{0};
  std::vector<std::size_t> indices;
  std::vector<double> values;

  double at(std::size_t r, std::size_t c) const {
    auto b = indices.begin() + static_cast<std::ptrdiff_t>(offsets[r]);
    auto e = indices.begin() + static_cast<std::ptrdiff_t>(offsets[r + 1]);
    auto it = std::lower_bound(b, e, c);
    return (it != e && *it == c) ? values[static_cast<std::size_t>(it - indices.begin())] : 0.0;
  }

  static SparseMatrix identity(std::size_t n) {
    SparseMatrix m;
    m.rows = m.cols = n;
    for (std::size_t i = 0; i < n; ++i) {
      m.indices.push_back(i);
      m.values.push_back(1.0);
      m.offsets.push_back(i + 1);
    }
    return m;
  }
};

/// D^{-1/2} (A + I) D^{-1/2} with D the degree matrix of A + I.
inline SparseMatrix normalized_adjacency(const TextAttributedGraph& g) {
  SparseMatrix m;
  m.rows = m.cols = g.num_nodes;
  std::vector<double> inv_sqrt(g.num_nodes);
  for (NodeId u = 0; u < g.num_nodes; ++u) inv_sqrt[u] = 1.0 / std::sqrt(static_cast<double>(g.degree(u) + 1));
  for (NodeId u = 0; u < g.num_nodes; ++u) {
    bool self_done = false;
    auto push = [&](NodeId v) {
      m.indices.push_back(v);
      m.values.push_back(inv_sqrt[u] * inv_sqrt[v]);
    };
    for (NodeId v : g.adjacent(u)) {
      if (!self_done && u < v) {
        push(u);
        self_done = true;
      }
      push(v);
    }
    if (!self_done) push(u);
    m.offsets.push_back(m.indices.size());
  }
  return m;
}

/// Row-normalized adjacency without self-loops (neighbor mean); isolated nodes get empty rows.
inline SparseMatrix mean_adjacency(const TextAttributedGraph& g) {
  SparseMatrix m;
  m.rows = m.cols = g.num_nodes;
  for (NodeId u = 0; u < g.num_nodes; ++u) {
    const double w = g.degree(u) ? 1.0 / static_cast<double>(g.degree(u)) : 0.0;
    for (NodeId v : g.adjacent(u)) {
      m.indices.push_back(v);
      m.values.push_back(w);
    }
    m.offsets.push_back(m.indices.size());
  }
  return m;
}

/// Both aggregation operators for one graph, built once and shared by every model.
struct GraphOperators {
  SparseMatrix normalized;
  SparseMatrix mean;

  static GraphOperators from(const TextAttributedGraph& g) {
    return {normalized_adjacency(g), mean_adjacency(g)};
  }
};

}  // namespace tagbd
