// tagbd: command-line front end for the text-trigger backdoor pipeline.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tagbd/tagbd.hpp"

namespace fs = std::filesystem;
using namespace tagbd;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string mode;
  std::string defense;
  std::string target;
};

struct RunConfig {
  ExperimentSpec spec;
  fs::path out;
  bool verbose = true;
};

Json load_config_json(const std::string& path) {
  if (path.empty()) throw ConfigError("--config is required");
  try {
    return read_json_file(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
}

/// Applies command-line overrides to the raw JSON so they reach the canonical config and hash.
void apply_overrides(Json& j, const CommonFlags& f) {
  if (!j.is_object()) throw ConfigError("field '<root>': expected an object");
  if (f.seed) j["seed"] = *f.seed;
  if (!f.mode.empty()) {
    parse_mode(f.mode);
    if (!j.contains("attack") || j["attack"].is_null()) j["attack"] = Json::object();
    j["attack"]["mode"] = f.mode;
  }
  if (!f.defense.empty()) {
    parse_defense(f.defense);
    if (!j.contains("defense") || j["defense"].is_null()) j["defense"] = Json::object();
    j["defense"]["kind"] = f.defense;
  }
  if (!f.target.empty()) {
    parse_target(f.target);
    j["target"] = f.target;
  }
}

RunConfig load_run_config(const CommonFlags& f) {
  Json j = load_config_json(f.config);
  apply_overrides(j, f);
  RunConfig rc;
  std::string out, verbosity = "info";
  if (j.contains("out") && !j["out"].is_null()) {
    if (!j["out"].is_string()) throw ConfigError("field 'out': expected a string");
    out = j["out"].get<std::string>();
  }
  if (j.contains("verbosity") && !j["verbosity"].is_null()) {
    if (!j["verbosity"].is_string()) throw ConfigError("field 'verbosity': expected a string");
    verbosity = j["verbosity"].get<std::string>();
    if (verbosity != "quiet" && verbosity != "info") throw ConfigError("field 'verbosity': expected quiet or info");
  }
  rc.spec = spec_from_json(j, {"out", "verbosity"});
  rc.spec.validate();
  if (!f.out.empty()) out = f.out;
  if (out.empty()) throw ConfigError("no output directory: pass --out or set 'out' in the config");
  rc.out = out;
  rc.verbose = verbosity == "info";
  return rc;
}

Logger make_logger(bool verbose) {
  if (!verbose) return {};
  return [](const std::string& m) { std::cerr << m << '\n'; };
}

void print_partial_warning(const ExperimentReport& rep) {
  if (!rep.partial) return;
  for (const auto& r : rep.runs)
    if (!r.ok()) std::cerr << "seed " << r.seed << " failed: " << r.status << '\n';
}

int finish(const std::vector<const ExperimentReport*>& reports) {
  for (auto* r : reports) {
    print_partial_warning(*r);
    if (r->partial) return kExitRuntime;
  }
  return 0;
}

void add_common(CLI::App* cmd, CommonFlags& f, bool experiment_flags) {
  cmd->add_option("--config", f.config, "experiment config (JSON)");
  cmd->add_option("--seed", f.seed, "base seed override");
  cmd->add_option("--out", f.out, "output directory");
  if (!experiment_flags) return;
  cmd->add_option("--mode", f.mode, "injection mode")->check(CLI::IsMember({"overwrite", "append"}));
  cmd->add_option("--defense", f.defense, "defense")->check(CLI::IsMember({"none", "prune", "od"}));
  cmd->add_option("--target", f.target, "target model")->check(CLI::IsMember({"gcn", "sage"}));
}

int cmd_synth(const CommonFlags& f) {
  Json j = load_config_json(f.config);
  if (!j.is_object()) throw ConfigError("field '<root>': expected an object");
  Json syn;
  if (j.contains("dataset") && j["dataset"].is_object() && j["dataset"].contains("synthetic"))
    syn = j["dataset"]["synthetic"];
  else if (j.contains("synthetic"))
    syn = j["synthetic"];
  else
    throw ConfigError("field 'dataset.synthetic': required by synth");
  if (f.seed) syn["seed"] = *f.seed;
  const auto spec = synthetic_from_json(syn, "dataset.synthetic");
  std::string out = f.out;
  if (out.empty() && j.contains("out") && j["out"].is_string()) out = j["out"].get<std::string>();
  if (out.empty()) throw ConfigError("no output directory: pass --out or set 'out' in the config");
  std::error_code ec;
  fs::create_directories(out, ec);
  const auto g = generate_synthetic(spec);
  save_dataset(g, (fs::path(out) / "nodes.jsonl").string(), (fs::path(out) / "edges.tsv").string());
  std::cout << "wrote " << g.num_nodes << " nodes, " << g.num_edges() << " edges to " << out << '\n';
  return 0;
}

int cmd_run(const CommonFlags& f) {
  const auto rc = load_run_config(f);
  auto out = run_experiment(rc.spec, make_logger(rc.verbose));
  emit_report(out, rc.out);
  std::cout << format_table(out.report);
  return finish({&out.report});
}

int cmd_ablate(const CommonFlags& f, std::vector<std::string> variants) {
  const auto rc = load_run_config(f);
  if (variants.empty()) variants.assign(kAblationVariants.begin(), kAblationVariants.end());
  for (const auto& v : variants) ablation_spec(rc.spec, v);  // reject unknown variants up front
  std::vector<ExperimentOutput> outs;
  for (const auto& v : variants) {
    outs.push_back(run_ablation(rc.spec, v, make_logger(rc.verbose)));
    emit_report(outs.back(), rc.out / v);
    std::cout << format_table(outs.back().report);
  }
  std::vector<const ExperimentReport*> reps;
  for (auto& o : outs) reps.push_back(&o.report);
  return finish(reps);
}

std::vector<double> parse_values(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("--values: '" + item + "' is not a number");
    }
  }
  if (out.empty()) throw ConfigError("--values: at least one value required");
  return out;
}

int cmd_sweep(const CommonFlags& f, const std::string& axis, const std::string& values) {
  const auto ax = parse_axis(axis);
  const auto vals = parse_values(values);
  const auto rc = load_run_config(f);
  for (double v : vals) sweep_spec(rc.spec, ax, v);
  auto sweep = run_sweep(rc.spec, ax, vals, make_logger(rc.verbose));
  emit_sweep(sweep, rc.out);
  std::cout << format_series(sweep);
  std::vector<const ExperimentReport*> reps;
  for (auto& p : sweep.points) reps.push_back(&p.output.report);
  return finish(reps);
}

struct DefendFlags {
  std::string nodes, edges, out, defense = "prune", prune_mode = "percentile";
  double prune_value = 0.05;
  std::size_t od_k = 10;
  double od_fraction = 0.05;
  std::size_t vocab_size = kDefaultVocabSize;
};

int cmd_defend(const DefendFlags& d) {
  if (d.nodes.empty() || d.edges.empty()) throw ConfigError("defend needs --nodes and --edges");
  if (d.out.empty()) throw ConfigError("defend needs --out");
  const auto kind = parse_defense(d.defense);
  const auto graph = load_dataset(d.nodes, d.edges);
  const auto vocab = build_vocab(graph.texts, d.vocab_size);
  const Tensor emb = encode_texts(graph.texts, vocab);
  fs::create_directories(d.out);
  const fs::path out(d.out);

  TextAttributedGraph defended = graph;
  std::vector<RemovedEdge> removed;
  std::optional<OutlierResult> od;
  if (kind == DefenseKind::prune) {
    PruneConfig cfg{d.prune_mode == "absolute" ? ThresholdMode::absolute : ThresholdMode::percentile, d.prune_value};
    auto res = prune_edges(graph, emb, cfg);
    defended = std::move(res.graph);
    removed = std::move(res.removed);
  } else if (kind == DefenseKind::od) {
    std::vector<NodeId> all(graph.num_nodes);
    for (NodeId i = 0; i < graph.num_nodes; ++i) all[i] = i;
    od = detect_outliers(emb, all, OdConfig{d.od_k, d.od_fraction});
    // Flagged nodes lose their edges; ids stay stable for downstream joins.
    std::vector<bool> flagged(graph.num_nodes, false);
    for (auto u : od->flagged) flagged[u] = true;
    std::vector<std::pair<NodeId, NodeId>> kept;
    for (auto [u, v] : graph.edge_list())
      if (!flagged[u] && !flagged[v]) kept.emplace_back(u, v);
    assign_edges(defended, kept);
  }
  check_invariants(defended);
  save_dataset(defended, (out / "nodes.jsonl").string(), (out / "edges.tsv").string());
  std::ofstream audit(out / "audit.jsonl");
  if (!audit) throw IoError("cannot write " + (out / "audit.jsonl").string());
  export_defense_audit(removed, od ? &*od : nullptr, audit);
  std::cout << "removed " << removed.size() << " edges, flagged " << (od ? od->flagged.size() : 0) << " nodes\n";
  return 0;
}

int cmd_report(std::filesystem::path in) {
  if (std::filesystem::is_directory(in)) in /= "report.json";
  std::ifstream f(in);
  if (!f) throw IoError("cannot open " + in.string());
  std::stringstream ss;
  ss << f.rdbuf();
  const auto rep = parse_report(ss.str());
  std::cout << format_table(rep);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Text-trigger backdoor attacks on text-attributed graphs"};
  app.require_subcommand(1);

  CommonFlags common;
  auto* synth = app.add_subcommand("synth", "materialize a synthetic text-attributed graph");
  add_common(synth, common, false);

  auto* run = app.add_subcommand("run", "run an experiment and emit its report");
  add_common(run, common, true);

  std::vector<std::string> variants;
  auto* ablate = app.add_subcommand("ablate", "run ablation variants");
  add_common(ablate, common, true);
  ablate->add_option("--variant", variants, "variant(s); default all")
      ->check(CLI::IsMember({"full", "no-ns", "no-ne", "no-fs"}));

  std::string axis, values;
  auto* sweep = app.add_subcommand("sweep", "sweep one attack parameter");
  add_common(sweep, common, true);
  sweep->add_option("--axis", axis, "budget or trigger_length")
      ->required()
      ->check(CLI::IsMember({"budget", "trigger_length"}));
  sweep->add_option("--values", values, "comma-separated values")->required();

  DefendFlags dflags;
  auto* defend = app.add_subcommand("defend", "apply a defense to a graph on disk");
  defend->add_option("--nodes", dflags.nodes, "node file")->required();
  defend->add_option("--edges", dflags.edges, "edge file")->required();
  defend->add_option("--out", dflags.out, "output directory")->required();
  defend->add_option("--defense", dflags.defense, "prune or od")->check(CLI::IsMember({"prune", "od"}));
  defend->add_option("--prune-mode", dflags.prune_mode, "percentile or absolute")
      ->check(CLI::IsMember({"percentile", "absolute"}));
  defend->add_option("--prune-value", dflags.prune_value, "threshold or fraction of edges");
  defend->add_option("--od-k", dflags.od_k, "neighbours for the outlier score");
  defend->add_option("--od-fraction", dflags.od_fraction, "fraction of nodes flagged");
  defend->add_option("--vocab-size", dflags.vocab_size, "bag-of-words vocabulary size");

  std::string report_in;
  auto* report = app.add_subcommand("report", "print the table for a machine report");
  report->add_option("--in", report_in, "report.json or a directory holding one")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(common);
    if (*run) return cmd_run(common);
    if (*ablate) return cmd_ablate(common, variants);
    if (*sweep) return cmd_sweep(common, axis, values);
    if (*defend) return cmd_defend(dflags);
    if (*report) return cmd_report(report_in);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
