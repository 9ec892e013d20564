#pragma once

// Poisoned-node selection, joint generator/shadow training, trigger injection and
// poisoned-graph construction.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "tagbd/errors.hpp"
#include "tagbd/graph.hpp"
#include "tagbd/nn.hpp"
#include "tagbd/optim.hpp"
#include "tagbd/rng.hpp"
#include "tagbd/tensor.hpp"
#include "tagbd/text.hpp"

namespace tagbd {

enum class InjectionMode { overwrite, append };

inline std::string_view mode_name(InjectionMode m) { return m == InjectionMode::overwrite ? "overwrite" : "append"; }

inline InjectionMode parse_mode(std::string_view s) {
  if (s == "overwrite") return InjectionMode::overwrite;
  if (s == "append") return InjectionMode::append;
  throw ConfigError("unknown injection mode '" + std::string(s) + "' (expected overwrite or append)");
}

/// How poisoned nodes are chosen: by surrogate entropy, or uniformly at random (ablation).
enum class SelectionStrategy { uncertainty, random };
/// What the trigger generator reads: surrogate hidden rows, or raw text embeddings (ablation).
enum class GeneratorInput { surrogate_hidden, text_embedding };

inline constexpr std::size_t kOverwriteTriggerTokens = 1024;
inline constexpr std::size_t kAppendTriggerTokens = 512;

struct AttackConfig {
  double budget_fraction = 0.01;
  int target_label = 0;
  std::optional<std::size_t> coverage;  // defaults to the number of classes
  double lambda = 0.5;
  InjectionMode mode = InjectionMode::overwrite;
  std::optional<std::size_t> max_trigger_tokens;  // defaults per mode
  std::size_t joint_epochs = 300;
  std::size_t roundtrip_period = 10;
  std::optional<double> delta_audit;
  SelectionStrategy selection = SelectionStrategy::uncertainty;
  GeneratorInput generator_input = GeneratorInput::surrogate_hidden;

  std::size_t trigger_tokens() const {
    if (max_trigger_tokens) return *max_trigger_tokens;
    return mode == InjectionMode::overwrite ? kOverwriteTriggerTokens : kAppendTriggerTokens;
  }
  std::size_t coverage_for(std::size_t num_classes) const { return coverage.value_or(num_classes); }

  void validate(std::size_t num_classes) const {
    if (!(budget_fraction > 0.0 && budget_fraction < 1.0)) throw ConfigError("attack.budget_fraction must lie in (0, 1)");
    if (target_label < 0 || static_cast<std::size_t>(target_label) >= num_classes)
      throw ConfigError("attack.target_label must be a valid class index");
    const auto gamma = coverage_for(num_classes);
    if (gamma < 1 || gamma > num_classes) throw ConfigError("attack.coverage must lie in [1, num_classes]");
    if (!(lambda >= 0.0)) throw ConfigError("attack.lambda must be >= 0");
    if (trigger_tokens() < 1) throw ConfigError("attack.max_trigger_tokens must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Selection

struct UncertaintyScore {
  NodeId node;
  double entropy;
};

inline std::vector<UncertaintyScore> uncertainty_from_logits(const Tensor& logits, std::span<const NodeId> nodes) {
  const Tensor probs = kernel::softmax_rows(logits);
  std::vector<UncertaintyScore> out;
  out.reserve(nodes.size());
  for (auto i : nodes) out.push_back({i, entropy(probs.row(i))});
  return out;
}

/// Entropy of the surrogate's evaluation-mode predictive distribution per node.
inline std::vector<UncertaintyScore> score_uncertainty(const GcnModel& surrogate, const GraphOperators& graph,
                                                       const Tensor& features, std::span<const NodeId> nodes) {
  return uncertainty_from_logits(predict_logits(surrogate, graph, features), nodes);
}

struct Selection {
  std::vector<NodeId> nodes;  // ascending
  std::size_t classes_covered = 0;
  std::vector<std::string> warnings;
};

inline std::size_t poison_budget(double fraction, std::size_t pool) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(pool) + 1e-9)));
}

/// Takes candidates in the given order, the first `budget` of them, then repairs class
/// coverage: while fewer than `coverage` ground-truth classes are present, the last
/// (lowest-ranked) selected node whose class appears at least twice is swapped for the
/// first unselected candidate of an uncovered class.
inline Selection select_in_order(std::span<const NodeId> ranked, std::span<const int> labels, std::size_t budget,
                                 std::size_t coverage) {
  if (ranked.empty()) throw Error("selection: no candidate nodes");
  Selection sel;
  std::set<int> present;
  for (auto n : ranked) present.insert(labels[n]);
  std::size_t gamma = coverage;
  if (gamma > present.size()) {
    sel.warnings.push_back("coverage " + std::to_string(coverage) + " exceeds the " + std::to_string(present.size()) +
                           " classes present among candidates; clipped");
    gamma = present.size();
  }
  if (budget > ranked.size()) budget = ranked.size();

  std::vector<bool> chosen(ranked.size(), false);
  std::map<int, std::size_t> multiplicity;
  for (std::size_t r = 0; r < budget; ++r) {
    chosen[r] = true;
    ++multiplicity[labels[ranked[r]]];
  }
  while (multiplicity.size() < gamma) {
    std::optional<std::size_t> evict, admit;
    for (std::size_t r = ranked.size(); r-- > 0;)
      if (chosen[r] && multiplicity[labels[ranked[r]]] >= 2) {
        evict = r;
        break;
      }
    for (std::size_t r = 0; r < ranked.size(); ++r)
      if (!chosen[r] && !multiplicity.contains(labels[ranked[r]])) {
        admit = r;
        break;
      }
    if (!evict || !admit) {
      sel.warnings.push_back("budget " + std::to_string(budget) + " cannot cover " + std::to_string(gamma) +
                             " classes; coverage maximized at " + std::to_string(multiplicity.size()));
      break;
    }
    chosen[*evict] = false;
    --multiplicity[labels[ranked[*evict]]];
    chosen[*admit] = true;
    ++multiplicity[labels[ranked[*admit]]];
  }
  for (std::size_t r = 0; r < ranked.size(); ++r)
    if (chosen[r]) sel.nodes.push_back(ranked[r]);
  std::sort(sel.nodes.begin(), sel.nodes.end());
  sel.classes_covered = multiplicity.size();
  return sel;
}

/// Budget max(1, floor(fraction * |scores|)); candidates ranked by entropy descending, node id
/// ascending on ties; then the coverage repair of select_in_order.
inline Selection select_top_k(std::span<const UncertaintyScore> scores, std::span<const int> labels,
                              double budget_fraction, std::size_t coverage) {
  if (scores.empty()) throw Error("selection: no scored nodes");
  std::vector<UncertaintyScore> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    return a.entropy != b.entropy ? a.entropy > b.entropy : a.node < b.node;
  });
  std::vector<NodeId> ranked;
  for (auto& s : sorted) ranked.push_back(s.node);
  const std::size_t raw = static_cast<std::size_t>(std::floor(budget_fraction * static_cast<double>(scores.size()) + 1e-9));
  auto sel = select_in_order(ranked, labels, poison_budget(budget_fraction, scores.size()), coverage);
  if (raw == 0) sel.warnings.insert(sel.warnings.begin(), "poison budget rounds to 0; raised to 1");
  return sel;
}

/// Uniformly random candidate order (seeded), same budget and coverage rule.
inline Selection select_random(std::span<const NodeId> pool, std::span<const int> labels, double budget_fraction,
                               std::size_t coverage, std::uint64_t seed) {
  std::vector<NodeId> ranked(pool.begin(), pool.end());
  std::sort(ranked.begin(), ranked.end());
  Rng rng(seed);
  rng.shuffle(std::span<NodeId>(ranked));
  return select_in_order(ranked, labels, poison_budget(budget_fraction, pool.size()), coverage);
}

// ---------------------------------------------------------------------------
// Triggers

/// decode then encode each row: the embedding of the text the vector actually produces.
inline Tensor project_to_text(const Tensor& embeddings, const Vocabulary& vocab, std::size_t max_tokens) {
  Tensor out(embeddings.rows(), embeddings.cols());
  for (std::size_t i = 0; i < embeddings.rows(); ++i)
    encode_into(decode(embeddings.row(i), vocab, max_tokens), vocab, out.row(i));
  return out;
}

/// overwrite -> trigger; append -> original + " " + trigger (no separator for an empty trigger).
inline std::string inject(std::string_view original, std::string_view trigger, InjectionMode mode) {
  if (mode == InjectionMode::overwrite) return std::string(trigger);
  if (trigger.empty()) return std::string(original);
  std::string out(original);
  out += ' ';
  out += trigger;
  return out;
}

struct TriggerBatch {
  Tensor embeddings;               // raw generator output, one row per input
  std::vector<std::string> texts;  // decoded triggers
};

inline TriggerBatch generate_trigger(const MlpGenerator& gen, const Tensor& inputs, const Vocabulary& vocab,
                                     std::size_t max_tokens) {
  if (gen.output_dim() != vocab.size()) throw ShapeError("generator output width differs from vocabulary size");
  TriggerBatch out{generate_embeddings(gen, inputs), {}};
  for (std::size_t i = 0; i < out.embeddings.rows(); ++i) out.texts.push_back(decode(out.embeddings.row(i), vocab, max_tokens));
  return out;
}

inline Tensor gather(const Tensor& m, std::span<const NodeId> rows) {
  Tensor out(rows.size(), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) std::copy_n(m.row(rows[r]).begin(), m.cols(), out.row(r).begin());
  return out;
}

/// Generator input rows: surrogate/shadow hidden representation or raw text embedding.
inline Tensor generator_inputs(const GcnModel& encoder, const GraphOperators& graph, const Tensor& features,
                               std::span<const NodeId> nodes, GeneratorInput kind) {
  if (kind == GeneratorInput::text_embedding) return gather(features, nodes);
  return gather(gcn_hidden(encoder, graph, features), nodes);
}

inline Tensor encode_texts(std::span<const std::string> texts, const Vocabulary& vocab) {
  Tensor out(texts.size(), vocab.size());
  for (std::size_t i = 0; i < texts.size(); ++i) encode_into(texts[i], vocab, out.row(i));
  return out;
}

// ---------------------------------------------------------------------------
// Joint training

struct JointTrainingResult {
  GcnModel shadow;
  MlpGenerator generator;
  std::vector<double> objective;  // generator-step total per epoch
  std::size_t epochs_run = 0;
};

struct JointLosses {
  double attack = 0.0;
  double clean = 0.0;
  double similarity = 0.0;
  double total = 0.0;
};

namespace detail {

/// Embedding-space stand-in for the injected text: overwrite uses the trigger embedding,
/// append the unit-normalized sum of original and trigger embeddings.
inline Var combine_rows(Tape& t, Var trigger, Var original, InjectionMode mode) {
  if (mode == InjectionMode::overwrite) return trigger;
  return ops::row_normalize(t, ops::add(t, original, trigger));
}

struct JointGraph {
  Var x_poisoned;
  Var trigger;
};

}  // namespace detail

/// Generator-step objective L_atk + L_clean + lambda * L_sim on a frozen shadow, with
/// both cross-entropies summed over their node sets. Exposed for gradient checks.
inline Var joint_objective(Tape& t, const GcnModel& shadow, std::span<const Var> shadow_params,
                           std::span<const Var> generator_params, const GraphOperators& graph, const Tensor& features,
                           const Tensor& inputs, std::span<const NodeId> poisoned, std::span<const NodeId> labeled,
                           std::span<const int> labeled_targets, int target_label, double lambda, InjectionMode mode,
                           const Tensor* projection, JointLosses* parts = nullptr) {
  Var trigger = generator_forward(t, generator_params, t.constant(inputs));
  if (projection) trigger = ops::straight_through(t, trigger, *projection);
  Var original = t.constant(gather(features, poisoned));
  Var rows = detail::combine_rows(t, trigger, original, mode);
  Var x = ops::replace_rows(t, t.constant(features), poisoned, rows);
  Var logits = gcn_forward(t, shadow, shadow_params, graph, x, false, nullptr).logits;
  std::vector<int> targets(poisoned.size(), target_label);
  Var atk = ops::scale(t, ops::cross_entropy(t, ops::gather_rows(t, logits, poisoned), targets),
                       static_cast<double>(poisoned.size()));
  Var clean = ops::scale(t, ops::cross_entropy(t, ops::gather_rows(t, logits, labeled), labeled_targets),
                         static_cast<double>(labeled.size()));
  Var sim = ops::cosine_sim_loss(t, trigger, original);
  Var total = ops::add(t, ops::add(t, atk, clean), ops::scale(t, sim, lambda));
  if (parts) *parts = {t.value(atk).item(), t.value(clean).item(), t.value(sim).item(), t.value(total).item()};
  return total;
}

/// Alternating optimization of the shadow GCN (on L_clean + L_atk) and the generator (on
/// L_atk + L_clean + lambda L_sim). Every `roundtrip_period` epochs the trigger embedding is
/// replaced by its decode/re-encode projection with a straight-through gradient. Stops when
/// the generator objective has not improved for `opt.patience` epochs.
inline JointTrainingResult joint_train(GcnModel shadow, MlpGenerator generator, const GraphOperators& graph,
                                       const Tensor& features, std::span<const int> labels,
                                       std::span<const NodeId> labeled, std::span<const NodeId> poisoned,
                                       const Vocabulary& vocab, const AttackConfig& cfg, const OptimizerConfig& opt,
                                       std::uint64_t seed) {
  if (poisoned.empty()) throw Error("joint training needs at least one poisoned node");
  if (labeled.empty()) throw Error("joint training needs labeled nodes");
  std::vector<int> labeled_targets;
  for (auto i : labeled) labeled_targets.push_back(labels[i]);
  std::vector<int> atk_targets(poisoned.size(), cfg.target_label);
  const Tensor original = gather(features, poisoned);

  Optimizer shadow_opt(opt), gen_opt(opt);
  JointTrainingResult res{shadow, generator, {}, 0};
  double best = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  for (std::size_t epoch = 0; epoch < cfg.joint_epochs; ++epoch) {
    const bool project = cfg.roundtrip_period > 0 && (epoch + 1) % cfg.roundtrip_period == 0;
    const Tensor inputs = generator_inputs(shadow, graph, features, poisoned, cfg.generator_input);

    // (b) shadow step on the current triggers
    {
      Tensor trig = generate_embeddings(generator, inputs);
      if (project) trig = project_to_text(trig, vocab, cfg.trigger_tokens());
      Tape t;
      auto sp = bind_parameters(t, shadow);
      Var rows = detail::combine_rows(t, t.constant(trig), t.constant(original), cfg.mode);
      Var x = ops::replace_rows(t, t.constant(features), poisoned, rows);
      Rng drop(derive_seed(seed, 2 * epoch));
      Var logits = gcn_forward(t, shadow, sp, graph, x, true, &drop).logits;
      Var atk = ops::scale(t, ops::cross_entropy(t, ops::gather_rows(t, logits, poisoned), atk_targets),
                           static_cast<double>(poisoned.size()));
      Var clean = ops::scale(t, ops::cross_entropy(t, ops::gather_rows(t, logits, labeled), labeled_targets),
                             static_cast<double>(labeled.size()));
      t.backward(ops::add(t, atk, clean));
      std::vector<Tensor> grads;
      for (Var v : sp) grads.push_back(t.grad(v));
      shadow_opt.step(parameter_pointers(shadow), grads);
    }

    // (c) generator step against the updated, frozen shadow
    JointLosses parts;
    {
      Tape t;
      auto sp = bind_parameters(t, shadow, false);
      auto gp = bind_parameters(t, generator);
      std::optional<Tensor> proj;
      if (project) proj = project_to_text(generate_embeddings(generator, inputs), vocab, cfg.trigger_tokens());
      Var total = joint_objective(t, shadow, sp, gp, graph, features, inputs, poisoned, labeled, labeled_targets,
                                  cfg.target_label, cfg.lambda, cfg.mode, proj ? &*proj : nullptr, &parts);
      t.backward(total);
      std::vector<Tensor> grads;
      for (Var v : gp) grads.push_back(t.grad(v));
      gen_opt.step(parameter_pointers(generator), grads);
    }

    res.objective.push_back(parts.total);
    res.epochs_run = epoch + 1;
    if (parts.total < best) {
      best = parts.total;
      stale = 0;
    } else if (++stale > opt.patience) {
      break;
    }
  }
  res.shadow = std::move(shadow);
  res.generator = std::move(generator);
  return res;
}

// ---------------------------------------------------------------------------
// Plans

struct PoisonedNode {
  NodeId node = 0;
  int original_label = 0;
  int assigned_label = 0;
  std::string original_text;
  std::string trigger_text;
  std::string poisoned_text;
  double cosine_to_original = 0.0;
};

struct PoisonPlan {
  InjectionMode mode = InjectionMode::overwrite;
  int target_label = 0;
  std::vector<PoisonedNode> nodes;
  Tensor embeddings;  // encode(poisoned_text) per node, row-aligned with `nodes`

  std::vector<NodeId> node_ids() const {
    std::vector<NodeId> out;
    for (auto& n : nodes) out.push_back(n.node);
    return out;
  }

  std::size_t delta_violations(std::optional<double> delta) const {
    if (!delta) return 0;
    return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(),
                                                  [&](const auto& n) { return n.cosine_to_original < *delta; }));
  }
};

/// Decodes the trigger embeddings, injects them into the node texts and re-encodes.
inline PoisonPlan make_plan(std::span<const NodeId> nodes, std::span<const std::string> texts, std::span<const int> labels,
                            const Tensor& trigger_embeddings, const Vocabulary& vocab, const AttackConfig& cfg) {
  if (trigger_embeddings.rows() != nodes.size()) throw ShapeError("plan: one trigger embedding per node required");
  PoisonPlan plan;
  plan.mode = cfg.mode;
  plan.target_label = cfg.target_label;
  plan.embeddings = Tensor(nodes.size(), vocab.size());
  for (std::size_t r = 0; r < nodes.size(); ++r) {
    PoisonedNode pn;
    pn.node = nodes[r];
    pn.original_label = labels[nodes[r]];
    pn.assigned_label = cfg.target_label;
    pn.original_text = texts[nodes[r]];
    pn.trigger_text = decode(trigger_embeddings.row(r), vocab, cfg.trigger_tokens());
    pn.poisoned_text = inject(pn.original_text, pn.trigger_text, cfg.mode);
    encode_into(pn.poisoned_text, vocab, plan.embeddings.row(r));
    const auto orig = encode(pn.original_text, vocab);
    const double na = kernel::norm(orig), nb = kernel::norm(plan.embeddings.row(r));
    pn.cosine_to_original = (na > 0.0 && nb > 0.0) ? kernel::dot(orig, plan.embeddings.row(r)) / (na * nb) : 0.0;
    plan.nodes.push_back(std::move(pn));
  }
  return plan;
}

/// Same plan with node ids passed through `to_original`.
inline PoisonPlan remap_plan(PoisonPlan plan, std::span<const NodeId> to_original) {
  for (auto& n : plan.nodes) n.node = to_original[n.node];
  return plan;
}

/// Copy of the graph with poisoned texts and target labels written in; topology untouched.
inline TextAttributedGraph build_poisoned_graph(const TextAttributedGraph& graph, const PoisonPlan& plan) {
  TextAttributedGraph out = graph;
  for (const auto& n : plan.nodes) {
    if (n.node >= graph.num_nodes)
      throw ReferentialError("plan references node " + std::to_string(n.node) + " outside the graph");
    out.texts[n.node] = n.poisoned_text;
    out.labels[n.node] = n.assigned_label;
  }
  return out;
}

struct TriggeredTest {
  std::vector<NodeId> nodes;
  std::vector<std::string> triggers;
  std::vector<std::string> texts;
  Tensor features;  // full feature matrix with triggered rows substituted
};

/// Triggers every test-target node from the surrogate's view of the full evaluation graph,
/// injects per mode and re-encodes the resulting texts into the feature matrix.
inline TriggeredTest apply_trigger_at_test(const MlpGenerator& generator, const GcnModel& surrogate,
                                           const GraphOperators& graph, const Tensor& features,
                                           std::span<const std::string> texts, std::span<const NodeId> targets,
                                           const Vocabulary& vocab, const AttackConfig& cfg) {
  TriggeredTest out;
  out.nodes.assign(targets.begin(), targets.end());
  out.features = features;
  if (targets.empty()) return out;
  const Tensor inputs = generator_inputs(surrogate, graph, features, targets, cfg.generator_input);
  auto batch = generate_trigger(generator, inputs, vocab, cfg.trigger_tokens());
  for (std::size_t r = 0; r < targets.size(); ++r) {
    out.texts.push_back(inject(texts[targets[r]], batch.texts[r], cfg.mode));
    out.triggers.push_back(std::move(batch.texts[r]));
    encode_into(out.texts.back(), vocab, out.features.row(targets[r]));
  }
  return out;
}

/// One JSON object per line: node_id, original_label, assigned_label, mode, trigger_text,
/// poisoned_text, cosine_to_original.
inline void export_plan(const PoisonPlan& plan, std::ostream& out) {
  for (const auto& n : plan.nodes) {
    nlohmann::ordered_json rec;
    rec["node_id"] = n.node;
    rec["original_label"] = n.original_label;
    rec["assigned_label"] = n.assigned_label;
    rec["mode"] = mode_name(plan.mode);
    rec["trigger_text"] = n.trigger_text;
    rec["poisoned_text"] = n.poisoned_text;
    rec["cosine_to_original"] = n.cosine_to_original;
    out << rec.dump() << '\n';
  }
}

}  // namespace tagbd
