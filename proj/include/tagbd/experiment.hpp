#pragma once

// Experiment runner: repetitions of the staged attack pipeline, ablations, sweeps, and
// report (de)serialization.

#include <algorithm>
#include <array>
#include <iterator>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "tagbd/attack.hpp"
#include "tagbd/config.hpp"
#include "tagbd/defense.hpp"
#include "tagbd/errors.hpp"
#include "tagbd/graph.hpp"
#include "tagbd/metrics.hpp"
#include "tagbd/nn.hpp"
#include "tagbd/optim.hpp"
#include "tagbd/text.hpp"

namespace tagbd {

inline constexpr int kReportFormatVersion = 1;

/// One repetition. Optional metrics are absent for a clean (null-attack) run or a failed one.
struct RunRow {
  std::uint64_t seed = 0;
  std::string status = "ok";

  std::optional<double> asr;
  std::size_t asr_hits = 0;
  std::size_t asr_eligible = 0;
  std::size_t asr_targets = 0;
  std::optional<double> ca;
  std::size_t ca_hits = 0;
  std::size_t ca_total = 0;

  std::optional<double> ppl_poisoned_mean;
  std::optional<double> ppl_clean_mean;
  std::optional<double> len_poisoned_mean;
  std::optional<double> len_clean_mean;
  std::size_t ppl_skipped_poisoned = 0;
  std::size_t ppl_skipped_clean = 0;
  std::size_t delta_violations = 0;

  // plan audit
  std::size_t poisoned_nodes = 0;
  std::size_t classes_covered = 0;
  std::optional<double> min_cosine_to_original;
  std::vector<std::string> warnings;

  // defense audit
  std::size_t removed_edges = 0;
  std::size_t flagged_nodes = 0;
  std::size_t flagged_poisoned = 0;

  // harness checks
  bool topology_preserved = true;
  bool append_prefix_preserved = true;

  // training diagnostics
  std::optional<double> surrogate_val_accuracy;
  std::optional<double> target_val_accuracy;
  std::size_t joint_epochs_run = 0;

  bool ok() const { return status == "ok"; }
  bool operator==(const RunRow&) const = default;
};

struct Aggregate {
  std::size_t n = 0;
  std::optional<double> mean;
  std::optional<double> stddev;  // sample standard deviation; 0 for a single row

  bool operator==(const Aggregate&) const = default;
};

inline constexpr std::array<std::string_view, 7> kAggregatedMetrics = {
    "asr", "ca", "ppl_poisoned_mean", "ppl_clean_mean", "len_poisoned_mean", "len_clean_mean", "delta_violations"};

struct ExperimentReport {
  int format_version = kReportFormatVersion;
  std::string label = "run";
  Json config;
  std::string config_hash;
  std::vector<RunRow> runs;
  std::map<std::string, Aggregate> aggregates;
  bool partial = false;

  bool operator==(const ExperimentReport&) const = default;
};

/// Per-repetition artifacts kept out of the machine report.
struct RunArtifacts {
  std::uint64_t seed = 0;
  std::optional<PoisonPlan> plan;
  std::vector<RemovedEdge> removed_edges;
  std::optional<OutlierResult> outliers;
};

struct ExperimentOutput {
  ExperimentReport report;
  std::vector<RunArtifacts> artifacts;
};

using Logger = std::function<void(const std::string&)>;

// ---------------------------------------------------------------------------
// Aggregation

inline std::optional<double> row_metric(const RunRow& r, std::string_view name) {
  if (name == "asr") return r.asr;
  if (name == "ca") return r.ca;
  if (name == "ppl_poisoned_mean") return r.ppl_poisoned_mean;
  if (name == "ppl_clean_mean") return r.ppl_clean_mean;
  if (name == "len_poisoned_mean") return r.len_poisoned_mean;
  if (name == "len_clean_mean") return r.len_clean_mean;
  if (name == "delta_violations") {
    if (!r.ok() || !r.asr) return std::nullopt;
    return static_cast<double>(r.delta_violations);
  }
  throw Error("unknown metric " + std::string(name));
}

inline Aggregate aggregate(std::span<const double> xs) {
  Aggregate a;
  a.n = xs.size();
  if (xs.empty()) return a;
  double s = 0.0;
  for (double x : xs) s += x;
  const double mean = s / static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  a.mean = mean;
  a.stddev = xs.size() > 1 ? std::sqrt(ss / static_cast<double>(xs.size() - 1)) : 0.0;
  return a;
}

inline std::map<std::string, Aggregate> aggregate_rows(std::span<const RunRow> rows) {
  std::map<std::string, Aggregate> out;
  for (auto name : kAggregatedMetrics) {
    std::vector<double> xs;
    for (const auto& r : rows)
      if (auto v = row_metric(r, name)) xs.push_back(*v);
    out[std::string(name)] = aggregate(xs);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pipeline

namespace stream {
inline constexpr std::uint64_t split = 1;
inline constexpr std::uint64_t surrogate_init = 2;
inline constexpr std::uint64_t surrogate_train = 3;
inline constexpr std::uint64_t generator_init = 4;
inline constexpr std::uint64_t joint = 5;
inline constexpr std::uint64_t random_selection = 6;
inline constexpr std::uint64_t target_init = 7;
inline constexpr std::uint64_t target_train = 8;
}  // namespace stream

inline TextAttributedGraph materialize_dataset(const DatasetSource& src) {
  if (src.synthetic) return generate_synthetic(*src.synthetic);
  return load_dataset(src.nodes_path, src.edges_path);
}

namespace detail {

inline std::vector<NodeId> merge_ids(std::vector<NodeId> a, std::span<const NodeId> b) {
  a.insert(a.end(), b.begin(), b.end());
  std::sort(a.begin(), a.end());
  a.erase(std::unique(a.begin(), a.end()), a.end());
  return a;
}

/// One repetition on an already materialized graph.
inline void run_repetition(const ExperimentSpec& spec, const TextAttributedGraph& graph, std::uint64_t seed,
                           RunRow& row, RunArtifacts& art) {
  const auto split = make_split(graph, spec.split, derive_seed(seed, stream::split));
  const auto induced = induced_training_graph(graph, split);
  const auto& train_graph = induced.graph;

  const auto vocab = build_vocab(train_graph.texts, spec.text.vocab_size);
  if (vocab.empty()) throw Error("vocabulary is empty");
  const Tensor train_features = encode_texts(train_graph.texts, vocab);
  const auto train_ops = GraphOperators::from(train_graph);
  const auto labeled = induced.split.ids(Role::labeled_train);
  const auto unlabeled = induced.split.ids(Role::unlabeled_train);
  const auto validation = induced.split.ids(Role::validation);

  TextAttributedGraph poisoned_full = graph;
  std::vector<NodeId> poisoned_local;
  std::optional<GcnModel> surrogate;
  std::optional<MlpGenerator> generator;

  if (spec.attack) {
    const auto& atk = *spec.attack;
    Rng init(derive_seed(seed, stream::surrogate_init));
    auto sur = train_node_classifier(
        GcnModel::init(vocab.size(), spec.model.hidden, graph.num_classes, init, spec.model.dropout), train_ops,
        train_features, train_graph.labels, labeled, validation, spec.optimizer,
        derive_seed(seed, stream::surrogate_train));
    row.surrogate_val_accuracy = sur.best_val_accuracy;
    surrogate = sur.model;

    const auto gamma = atk.coverage_for(graph.num_classes);
    Selection sel = atk.selection == SelectionStrategy::uncertainty
                        ? select_top_k(score_uncertainty(*surrogate, train_ops, train_features, unlabeled),
                                       train_graph.labels, atk.budget_fraction, gamma)
                        : select_random(unlabeled, train_graph.labels, atk.budget_fraction, gamma,
                                        derive_seed(seed, stream::random_selection));
    poisoned_local = sel.nodes;
    row.classes_covered = sel.classes_covered;
    row.warnings = sel.warnings;

    const std::size_t gen_in =
        atk.generator_input == GeneratorInput::surrogate_hidden ? spec.model.hidden : vocab.size();
    Rng ginit(derive_seed(seed, stream::generator_init));
    auto gen0 = MlpGenerator::init(gen_in, spec.model.generator_hidden, vocab.size(), ginit);
    auto joint = joint_train(*surrogate, gen0, train_ops, train_features, train_graph.labels, labeled, poisoned_local,
                             vocab, atk, spec.optimizer, derive_seed(seed, stream::joint));
    row.joint_epochs_run = joint.epochs_run;
    generator = joint.generator;

    const Tensor inputs = generator_inputs(joint.shadow, train_ops, train_features, poisoned_local, atk.generator_input);
    const Tensor triggers = generate_embeddings(joint.generator, inputs);
    auto plan = remap_plan(make_plan(poisoned_local, train_graph.texts, train_graph.labels, triggers, vocab, atk),
                           induced.to_original);
    row.poisoned_nodes = plan.nodes.size();
    row.delta_violations = plan.delta_violations(atk.delta_audit);
    for (const auto& n : plan.nodes) {
      row.min_cosine_to_original = std::min(row.min_cosine_to_original.value_or(n.cosine_to_original),
                                            n.cosine_to_original);
      if (atk.mode == InjectionMode::append && !n.poisoned_text.starts_with(n.original_text))
        row.append_prefix_preserved = false;
    }
    poisoned_full = build_poisoned_graph(graph, plan);
    row.topology_preserved =
        poisoned_full.same_topology(graph) && adjacency_checksum(poisoned_full) == adjacency_checksum(graph);

    const auto lm = train_bigram_lm(train_graph.texts, spec.text.lm_k);
    std::vector<std::string> ptexts, ctexts;
    for (const auto& n : plan.nodes) {
      ptexts.push_back(n.poisoned_text);
      ctexts.push_back(n.original_text);
    }
    const auto stealth = compute_stealth_stats(lm, ptexts, ctexts);
    row.ppl_poisoned_mean = stealth.poisoned.ppl_mean;
    row.ppl_clean_mean = stealth.clean.ppl_mean;
    row.len_poisoned_mean = stealth.poisoned.len_mean;
    row.len_clean_mean = stealth.clean.len_mean;
    row.ppl_skipped_poisoned = stealth.poisoned.skipped;
    row.ppl_skipped_clean = stealth.clean.skipped;
    art.plan = std::move(plan);
  }

  // Target training graph: the poisoned graph restricted to training nodes.
  auto target_graph = induced_training_graph(poisoned_full, split).graph;
  const Tensor target_features = encode_texts(target_graph.texts, vocab);
  auto train_ids = merge_ids(labeled, poisoned_local);

  if (spec.defense.kind == DefenseKind::prune) {
    auto pruned = prune_edges(target_graph, target_features, spec.defense.prune);
    for (auto& e : pruned.removed) {
      e.source = induced.to_original[e.source];
      e.target = induced.to_original[e.target];
    }
    row.removed_edges = pruned.removed.size();
    art.removed_edges = std::move(pruned.removed);
    target_graph = std::move(pruned.graph);
  } else if (spec.defense.kind == DefenseKind::od) {
    auto od = detect_outliers(target_features, train_ids, spec.defense.od);
    row.flagged_nodes = od.flagged.size();
    for (auto u : od.flagged)
      row.flagged_poisoned += std::binary_search(poisoned_local.begin(), poisoned_local.end(), u);
    std::vector<NodeId> kept;
    std::set_difference(train_ids.begin(), train_ids.end(), od.flagged.begin(), od.flagged.end(),
                        std::back_inserter(kept));
    train_ids = std::move(kept);
    for (auto& u : od.flagged) u = induced.to_original[u];
    for (auto& s : od.scores) s.node = induced.to_original[s.node];
    art.outliers = std::move(od);
  }
  const auto target_ops = GraphOperators::from(target_graph);

  // Evaluation on the full clean graph; triggered rows substituted for test-target nodes.
  const auto eval_ops = GraphOperators::from(graph);
  const Tensor eval_features = encode_texts(graph.texts, vocab);
  const auto test_clean = split.ids(Role::test_clean);
  const auto test_target = split.ids(Role::test_target);

  auto evaluate = [&](const auto& model) {
    const auto ca = compute_ca(model, eval_ops, eval_features, test_clean, graph.labels);
    row.ca = ca.value;
    row.ca_hits = ca.hits;
    row.ca_total = ca.total;
    if (!spec.attack) return;
    auto triggered = apply_trigger_at_test(*generator, *surrogate, eval_ops, eval_features, graph.texts, test_target,
                                           vocab, *spec.attack);
    const auto asr =
        compute_asr(model, eval_ops, triggered.features, test_target, spec.attack->target_label, graph.labels);
    row.asr = asr.value;
    row.asr_hits = asr.hits;
    row.asr_eligible = asr.total;
    row.asr_targets = asr.targets;
  };

  Rng tinit(derive_seed(seed, stream::target_init));
  const auto tseed = derive_seed(seed, stream::target_train);
  if (spec.target == TargetKind::gcn) {
    auto m = GcnModel::init(vocab.size(), spec.model.hidden, graph.num_classes, tinit, spec.model.dropout);
    auto res = train_node_classifier(m, target_ops, target_features, target_graph.labels, train_ids, validation,
                                     spec.optimizer, tseed);
    row.target_val_accuracy = res.best_val_accuracy;
    evaluate(res.model);
  } else {
    auto m = SageModel::init(vocab.size(), spec.model.hidden, graph.num_classes, tinit, spec.model.dropout);
    auto res = train_node_classifier(m, target_ops, target_features, target_graph.labels, train_ids, validation,
                                     spec.optimizer, tseed);
    row.target_val_accuracy = res.best_val_accuracy;
    evaluate(res.model);
  }
}

}  // namespace detail

/// Runs `spec.repetitions` repetitions with seeds base_seed + r. A failing repetition is
/// recorded with its error and the report is marked partial.
inline ExperimentOutput run_experiment(const ExperimentSpec& spec, const Logger& log = {}) {
  spec.validate();
  const auto graph = materialize_dataset(spec.dataset);
  check_invariants(graph);
  if (spec.attack) spec.attack->validate(graph.num_classes);

  ExperimentOutput out;
  out.report.config = spec_to_json(spec);
  out.report.config_hash = config_hash(spec);
  for (std::size_t r = 0; r < spec.repetitions; ++r) {
    const std::uint64_t seed = spec.base_seed + r;
    RunRow row;
    RunArtifacts art;
    row.seed = art.seed = seed;
    try {
      detail::run_repetition(spec, graph, seed, row, art);
    } catch (const std::exception& e) {
      RunRow failed;
      failed.seed = seed;
      failed.status = std::string("error: ") + e.what();
      row = std::move(failed);
      art = RunArtifacts{seed, {}, {}, {}};
      out.report.partial = true;
    }
    if (log) {
      std::ostringstream msg;
      msg << "seed " << seed << ": " << row.status;
      if (row.asr) msg << " asr=" << *row.asr;
      if (row.ca) msg << " ca=" << *row.ca;
      log(msg.str());
    }
    out.report.runs.push_back(std::move(row));
    out.artifacts.push_back(std::move(art));
  }
  out.report.aggregates = aggregate_rows(out.report.runs);
  return out;
}

// ---------------------------------------------------------------------------
// Ablations and sweeps

inline constexpr std::array<std::string_view, 4> kAblationVariants = {"full", "no-ns", "no-ne", "no-fs"};

/// The spec with the single substitution named by `variant`.
inline ExperimentSpec ablation_spec(ExperimentSpec spec, std::string_view variant) {
  if (!spec.attack) throw ConfigError("ablation needs an attack section");
  if (variant == "full") {
  } else if (variant == "no-ns") {
    spec.attack->selection = SelectionStrategy::random;
  } else if (variant == "no-ne") {
    spec.attack->generator_input = GeneratorInput::text_embedding;
  } else if (variant == "no-fs") {
    spec.attack->lambda = 0.0;
  } else {
    throw ConfigError("unknown ablation variant '" + std::string(variant) + "' (expected full, no-ns, no-ne or no-fs)");
  }
  return spec;
}

inline ExperimentOutput run_ablation(const ExperimentSpec& spec, std::string_view variant, const Logger& log = {}) {
  auto out = run_experiment(ablation_spec(spec, variant), log);
  out.report.label = "ablation:" + std::string(variant);
  return out;
}

enum class SweepAxis { budget, trigger_length };

inline SweepAxis parse_axis(std::string_view s) {
  if (s == "budget") return SweepAxis::budget;
  if (s == "trigger_length") return SweepAxis::trigger_length;
  throw ConfigError("unknown sweep axis '" + std::string(s) + "' (expected budget or trigger_length)");
}

inline std::string_view axis_name(SweepAxis a) { return a == SweepAxis::budget ? "budget" : "trigger_length"; }

inline ExperimentSpec sweep_spec(ExperimentSpec spec, SweepAxis axis, double value) {
  if (!spec.attack) throw ConfigError("sweep needs an attack section");
  if (axis == SweepAxis::budget) {
    spec.attack->budget_fraction = value;
  } else {
    if (!(value >= 1.0) || value != std::floor(value)) throw ConfigError("trigger_length values must be positive integers");
    spec.attack->max_trigger_tokens = static_cast<std::size_t>(value);
  }
  return spec;
}

struct SweepPoint {
  double value = 0.0;
  ExperimentOutput output;
};

struct SweepResult {
  SweepAxis axis = SweepAxis::budget;
  std::vector<SweepPoint> points;
};

inline SweepResult run_sweep(const ExperimentSpec& spec, SweepAxis axis, std::span<const double> values,
                             const Logger& log = {}) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  SweepResult res{axis, {}};
  for (double v : values) {
    auto out = run_experiment(sweep_spec(spec, axis, v), log);
    std::ostringstream label;
    label << "sweep:" << axis_name(axis) << "=" << v;
    out.report.label = label.str();
    res.points.push_back({v, std::move(out)});
  }
  return res;
}

// ---------------------------------------------------------------------------
// Serialization

namespace detail {

using OJson = nlohmann::ordered_json;

template <class T>
OJson opt(const std::optional<T>& v) {
  return v ? OJson(*v) : OJson(nullptr);
}

template <class T>
std::optional<T> get_opt(const OJson& j, const char* key) {
  const auto& v = j.at(key);
  if (v.is_null()) return std::nullopt;
  return v.get<T>();
}

}  // namespace detail

inline nlohmann::ordered_json row_to_json(const RunRow& r) {
  using detail::opt;
  nlohmann::ordered_json j;
  j["seed"] = r.seed;
  j["status"] = r.status;
  j["asr"] = opt(r.asr);
  j["asr_hits"] = r.asr_hits;
  j["asr_eligible"] = r.asr_eligible;
  j["asr_targets"] = r.asr_targets;
  j["ca"] = opt(r.ca);
  j["ca_hits"] = r.ca_hits;
  j["ca_total"] = r.ca_total;
  j["ppl_poisoned_mean"] = opt(r.ppl_poisoned_mean);
  j["ppl_clean_mean"] = opt(r.ppl_clean_mean);
  j["len_poisoned_mean"] = opt(r.len_poisoned_mean);
  j["len_clean_mean"] = opt(r.len_clean_mean);
  j["ppl_skipped_poisoned"] = r.ppl_skipped_poisoned;
  j["ppl_skipped_clean"] = r.ppl_skipped_clean;
  j["delta_violations"] = r.delta_violations;
  j["poisoned_nodes"] = r.poisoned_nodes;
  j["classes_covered"] = r.classes_covered;
  j["min_cosine_to_original"] = opt(r.min_cosine_to_original);
  j["warnings"] = r.warnings;
  j["removed_edges"] = r.removed_edges;
  j["flagged_nodes"] = r.flagged_nodes;
  j["flagged_poisoned"] = r.flagged_poisoned;
  j["topology_preserved"] = r.topology_preserved;
  j["append_prefix_preserved"] = r.append_prefix_preserved;
  j["surrogate_val_accuracy"] = opt(r.surrogate_val_accuracy);
  j["target_val_accuracy"] = opt(r.target_val_accuracy);
  j["joint_epochs_run"] = r.joint_epochs_run;
  return j;
}

inline RunRow row_from_json(const nlohmann::ordered_json& j) {
  using detail::get_opt;
  RunRow r;
  r.seed = j.at("seed").get<std::uint64_t>();
  r.status = j.at("status").get<std::string>();
  r.asr = get_opt<double>(j, "asr");
  r.asr_hits = j.at("asr_hits").get<std::size_t>();
  r.asr_eligible = j.at("asr_eligible").get<std::size_t>();
  r.asr_targets = j.at("asr_targets").get<std::size_t>();
  r.ca = get_opt<double>(j, "ca");
  r.ca_hits = j.at("ca_hits").get<std::size_t>();
  r.ca_total = j.at("ca_total").get<std::size_t>();
  r.ppl_poisoned_mean = get_opt<double>(j, "ppl_poisoned_mean");
  r.ppl_clean_mean = get_opt<double>(j, "ppl_clean_mean");
  r.len_poisoned_mean = get_opt<double>(j, "len_poisoned_mean");
  r.len_clean_mean = get_opt<double>(j, "len_clean_mean");
  r.ppl_skipped_poisoned = j.at("ppl_skipped_poisoned").get<std::size_t>();
  r.ppl_skipped_clean = j.at("ppl_skipped_clean").get<std::size_t>();
  r.delta_violations = j.at("delta_violations").get<std::size_t>();
  r.poisoned_nodes = j.at("poisoned_nodes").get<std::size_t>();
  r.classes_covered = j.at("classes_covered").get<std::size_t>();
  r.min_cosine_to_original = get_opt<double>(j, "min_cosine_to_original");
  r.warnings = j.at("warnings").get<std::vector<std::string>>();
  r.removed_edges = j.at("removed_edges").get<std::size_t>();
  r.flagged_nodes = j.at("flagged_nodes").get<std::size_t>();
  r.flagged_poisoned = j.at("flagged_poisoned").get<std::size_t>();
  r.topology_preserved = j.at("topology_preserved").get<bool>();
  r.append_prefix_preserved = j.at("append_prefix_preserved").get<bool>();
  r.surrogate_val_accuracy = get_opt<double>(j, "surrogate_val_accuracy");
  r.target_val_accuracy = get_opt<double>(j, "target_val_accuracy");
  r.joint_epochs_run = j.at("joint_epochs_run").get<std::size_t>();
  return r;
}

inline nlohmann::ordered_json report_to_json(const ExperimentReport& rep) {
  using detail::opt;
  nlohmann::ordered_json j;
  j["format"] = "tagbd-report";
  j["format_version"] = rep.format_version;
  j["label"] = rep.label;
  j["config_hash"] = rep.config_hash;
  j["config"] = nlohmann::ordered_json::parse(rep.config.dump());
  j["partial"] = rep.partial;
  j["runs"] = nlohmann::ordered_json::array();
  for (const auto& r : rep.runs) j["runs"].push_back(row_to_json(r));
  nlohmann::ordered_json agg = nlohmann::ordered_json::object();
  for (const auto& [name, a] : rep.aggregates) agg[name] = {{"n", a.n}, {"mean", opt(a.mean)}, {"std", opt(a.stddev)}};
  j["aggregates"] = agg;
  return j;
}

inline ExperimentReport report_from_json(const nlohmann::ordered_json& j) {
  using detail::get_opt;
  try {
    if (j.at("format").get<std::string>() != "tagbd-report") throw ParseError("not a tagbd report");
    ExperimentReport rep;
    rep.format_version = j.at("format_version").get<int>();
    if (rep.format_version != kReportFormatVersion)
      throw ParseError("unsupported report format version " + std::to_string(rep.format_version));
    rep.label = j.at("label").get<std::string>();
    rep.config_hash = j.at("config_hash").get<std::string>();
    rep.config = Json::parse(j.at("config").dump());
    rep.partial = j.at("partial").get<bool>();
    for (const auto& r : j.at("runs")) rep.runs.push_back(row_from_json(r));
    for (const auto& [name, a] : j.at("aggregates").items())
      rep.aggregates[name] = {a.at("n").get<std::size_t>(), get_opt<double>(a, "mean"), get_opt<double>(a, "std")};
    return rep;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("report: ") + e.what());
  }
}

inline std::string serialize_report(const ExperimentReport& rep) { return report_to_json(rep).dump(2) + "\n"; }

inline ExperimentReport parse_report(std::string_view text) {
  try {
    return report_from_json(nlohmann::ordered_json::parse(text));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("report: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Emission

namespace detail {

inline std::string cell(std::optional<double> v) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
  if (!out) throw IoError("write failed for " + path.string());
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

}  // namespace detail

/// Fixed-width table: one line per seed, then mean and std lines.
inline std::string format_table(const ExperimentReport& rep) {
  std::ostringstream out;
  out << "# " << rep.label << "  config " << rep.config_hash << (rep.partial ? "  (partial)" : "") << '\n';
  char line[512];
  std::snprintf(line, sizeof line, "%-8s %-10s %-10s %-18s %-15s %-18s %-15s %-16s %s\n", "seed", "asr", "ca",
                "ppl_poisoned_mean", "ppl_clean_mean", "len_poisoned_mean", "len_clean_mean", "delta_violations",
                "status");
  out << line;
  for (const auto& r : rep.runs) {
    std::snprintf(line, sizeof line, "%-8llu %-10s %-10s %-18s %-15s %-18s %-15s %-16s %s\n",
                  static_cast<unsigned long long>(r.seed), detail::cell(r.asr).c_str(), detail::cell(r.ca).c_str(),
                  detail::cell(r.ppl_poisoned_mean).c_str(), detail::cell(r.ppl_clean_mean).c_str(),
                  detail::cell(r.len_poisoned_mean).c_str(), detail::cell(r.len_clean_mean).c_str(),
                  r.ok() ? std::to_string(r.delta_violations).c_str() : "-", r.status.c_str());
    out << line;
  }
  for (const char* stat : {"mean", "std"}) {
    auto pick = [&](const char* name) {
      auto it = rep.aggregates.find(name);
      if (it == rep.aggregates.end()) return std::string("-");
      return detail::cell(std::string_view(stat) == "mean" ? it->second.mean : it->second.stddev);
    };
    std::snprintf(line, sizeof line, "%-8s %-10s %-10s %-18s %-15s %-18s %-15s %-16s\n", stat, pick("asr").c_str(),
                  pick("ca").c_str(), pick("ppl_poisoned_mean").c_str(), pick("ppl_clean_mean").c_str(),
                  pick("len_poisoned_mean").c_str(), pick("len_clean_mean").c_str(), pick("delta_violations").c_str());
    out << line;
  }
  return out.str();
}

/// Writes report.json, report.txt, and per-seed plan_<seed>.jsonl / defense_<seed>.jsonl.
inline void emit_report(const ExperimentOutput& output, const std::filesystem::path& out_dir) {
  detail::ensure_dir(out_dir);
  detail::write_file(out_dir / "report.json", serialize_report(output.report));
  detail::write_file(out_dir / "report.txt", format_table(output.report));
  for (const auto& a : output.artifacts) {
    const auto tag = std::to_string(a.seed);
    if (a.plan) {
      std::ostringstream s;
      export_plan(*a.plan, s);
      detail::write_file(out_dir / ("plan_" + tag + ".jsonl"), s.str());
    }
    if (!a.removed_edges.empty() || a.outliers) {
      std::ostringstream s;
      export_defense_audit(a.removed_edges, a.outliers ? &*a.outliers : nullptr, s);
      detail::write_file(out_dir / ("defense_" + tag + ".jsonl"), s.str());
    }
  }
}

/// Tab-separated series: one line per swept value with mean/std of each metric.
inline std::string format_series(const SweepResult& sweep) {
  std::ostringstream out;
  out << axis_name(sweep.axis);
  for (auto name : kAggregatedMetrics) out << '\t' << name << "_mean\t" << name << "_std";
  out << '\n';
  for (const auto& p : sweep.points) {
    out << p.value;
    for (auto name : kAggregatedMetrics) {
      const auto& a = p.output.report.aggregates.at(std::string(name));
      out << '\t' << detail::cell(a.mean) << '\t' << detail::cell(a.stddev);
    }
    out << '\n';
  }
  return out.str();
}

/// One sub-directory per value plus series.tsv.
inline void emit_sweep(const SweepResult& sweep, const std::filesystem::path& out_dir) {
  detail::ensure_dir(out_dir);
  for (const auto& p : sweep.points) {
    std::ostringstream name;
    name << axis_name(sweep.axis) << "_" << p.value;
    emit_report(p.output, out_dir / name.str());
  }
  detail::write_file(out_dir / "series.tsv", format_series(sweep));
}

}  // namespace tagbd
