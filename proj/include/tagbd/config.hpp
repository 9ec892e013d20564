#pragma once

// Experiment specification, its canonical JSON form, and the configuration hash.

#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>

#include "json.hpp"
#include "tagbd/attack.hpp"
#include "tagbd/defense.hpp"
#include "tagbd/errors.hpp"
#include "tagbd/graph.hpp"
#include "tagbd/nn.hpp"
#include "tagbd/optim.hpp"
#include "tagbd/text.hpp"

namespace tagbd {

using Json = nlohmann::json;

enum class DefenseKind { none, prune, od };
enum class TargetKind { gcn, sage };

inline std::string_view defense_name(DefenseKind k) {
  switch (k) {
    case DefenseKind::none: return "none";
    case DefenseKind::prune: return "prune";
    case DefenseKind::od: return "od";
  }
  return "?";
}

inline DefenseKind parse_defense(std::string_view s) {
  if (s == "none") return DefenseKind::none;
  if (s == "prune") return DefenseKind::prune;
  if (s == "od") return DefenseKind::od;
  throw ConfigError("unknown defense '" + std::string(s) + "' (expected none, prune or od)");
}

inline std::string_view target_name(TargetKind k) { return k == TargetKind::gcn ? "gcn" : "sage"; }

inline TargetKind parse_target(std::string_view s) {
  if (s == "gcn") return TargetKind::gcn;
  if (s == "sage") return TargetKind::sage;
  throw ConfigError("unknown target model '" + std::string(s) + "' (expected gcn or sage)");
}

struct DatasetSource {
  std::optional<SyntheticSpec> synthetic;
  std::string nodes_path;
  std::string edges_path;
};

struct DefenseConfig {
  DefenseKind kind = DefenseKind::none;
  PruneConfig prune;
  OdConfig od;
};

struct TextConfig {
  std::size_t vocab_size = kDefaultVocabSize;
  double lm_k = 1.0;
};

struct ExperimentSpec {
  DatasetSource dataset;
  std::optional<AttackConfig> attack;  // nullopt: clean baseline
  DefenseConfig defense;
  TargetKind target = TargetKind::gcn;
  std::size_t repetitions = 5;
  std::uint64_t base_seed = 0;
  SplitFractions split;
  OptimizerConfig optimizer;
  ModelConfig model;
  TextConfig text;

  void validate() const {
    if (repetitions < 1) throw ConfigError("repetitions must be >= 1");
    const bool files = !dataset.nodes_path.empty() || !dataset.edges_path.empty();
    if (dataset.synthetic && files) throw ConfigError("dataset: give either a synthetic spec or file paths, not both");
    if (!dataset.synthetic && (dataset.nodes_path.empty() || dataset.edges_path.empty()))
      throw ConfigError("dataset: missing dataset paths (dataset.nodes and dataset.edges) or dataset.synthetic");
    if (dataset.synthetic) dataset.synthetic->validate();
    if (defense.kind == DefenseKind::prune) defense.prune.validate();
    if (defense.kind == DefenseKind::od) defense.od.validate();
    if (optimizer.max_epochs < 1) throw ConfigError("optimizer.max_epochs must be >= 1");
    if (!(optimizer.learning_rate > 0.0)) throw ConfigError("optimizer.learning_rate must be > 0");
    if (!(model.dropout >= 0.0 && model.dropout < 1.0)) throw ConfigError("model.dropout must lie in [0, 1)");
    if (model.hidden < 1 || model.generator_hidden < 1) throw ConfigError("model sizes must be >= 1");
    if (text.vocab_size < 1) throw ConfigError("text.vocab_size must be >= 1");
    if (!(text.lm_k > 0.0)) throw ConfigError("text.lm_k must be > 0");
  }
};

// ---------------------------------------------------------------------------
// JSON <-> spec

namespace detail {

/// Typed, strict reader over one JSON object; every error names the full field path.
class FieldReader {
 public:
  FieldReader(const Json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError("field '" + display() + "': expected an object");
  }

  ~FieldReader() = default;

  /// Throws on keys that were never read.
  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it)
      if (!seen_.contains(it.key())) throw ConfigError("field '" + child(it.key()) + "': unknown field");
  }

  bool has(const std::string& key) const { return obj_.contains(key) && !obj_.at(key).is_null(); }

  const Json* raw(const std::string& key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return (it == obj_.end() || it->is_null()) ? nullptr : &*it;
  }

  template <class T>
  void read(const std::string& key, T& out) {
    const Json* v = raw(key);
    if (!v) return;
    out = convert<T>(*v, child(key));
  }

  template <class T>
  void read(const std::string& key, std::optional<T>& out) {
    const Json* v = raw(key);
    if (!v) {
      out.reset();
      return;
    }
    out = convert<T>(*v, child(key));
  }

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  std::string display() const { return path_.empty() ? "<root>" : path_; }

  template <class T>
  static T convert(const Json& v, const std::string& path) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("field '" + path + "': expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError("field '" + path + "': expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError("field '" + path + "': expected a number");
      return v.get<T>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError("field '" + path + "': expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_unsigned()) return v.get<T>();
        if (v.get<long long>() < 0) throw ConfigError("field '" + path + "': must be non-negative");
      }
      return v.get<T>();
    }
  }

  const Json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class E, class Parse>
void read_enum(FieldReader& r, const std::string& key, E& out, Parse parse) {
  std::optional<std::string> s;
  r.read(key, s);
  if (!s) return;
  try {
    out = parse(*s);
  } catch (const ConfigError& e) {
    throw ConfigError("field '" + r.child(key) + "': " + e.what());
  }
}

inline std::string_view selection_name(SelectionStrategy s) { return s == SelectionStrategy::uncertainty ? "uncertainty" : "random"; }
inline SelectionStrategy parse_selection(std::string_view s) {
  if (s == "uncertainty") return SelectionStrategy::uncertainty;
  if (s == "random") return SelectionStrategy::random;
  throw ConfigError("expected uncertainty or random");
}
inline std::string_view generator_input_name(GeneratorInput g) {
  return g == GeneratorInput::surrogate_hidden ? "hidden" : "text";
}
inline GeneratorInput parse_generator_input(std::string_view s) {
  if (s == "hidden") return GeneratorInput::surrogate_hidden;
  if (s == "text") return GeneratorInput::text_embedding;
  throw ConfigError("expected hidden or text");
}
inline std::string_view optimizer_name(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "gd"; }
inline OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "gd") return OptimizerKind::gradient_descent;
  throw ConfigError("expected adam or gd");
}
inline ThresholdMode parse_threshold(std::string_view s) {
  if (s == "percentile") return ThresholdMode::percentile;
  if (s == "absolute") return ThresholdMode::absolute;
  throw ConfigError("expected percentile or absolute");
}

}  // namespace detail

inline Json synthetic_to_json(const SyntheticSpec& s) {
  return Json{{"num_classes", s.num_classes},           {"nodes_per_class", s.nodes_per_class},
              {"p_intra", s.p_intra},                   {"p_inter", s.p_inter},
              {"class_vocab_size", s.class_vocab_size}, {"shared_vocab_size", s.shared_vocab_size},
              {"words_per_text", s.words_per_text},     {"seed", s.seed}};
}

/// Reads a synthetic spec; `seed` is mandatory.
inline SyntheticSpec synthetic_from_json(const Json& j, const std::string& path) {
  detail::FieldReader r(j, path);
  SyntheticSpec s;
  if (!r.has("seed")) throw ConfigError("field '" + r.child("seed") + "': required");
  r.read("num_classes", s.num_classes);
  r.read("nodes_per_class", s.nodes_per_class);
  r.read("p_intra", s.p_intra);
  r.read("p_inter", s.p_inter);
  r.read("class_vocab_size", s.class_vocab_size);
  r.read("shared_vocab_size", s.shared_vocab_size);
  r.read("words_per_text", s.words_per_text);
  r.read("seed", s.seed);
  r.finish();
  return s;
}

inline Json attack_to_json(const AttackConfig& a) {
  Json j{{"budget_fraction", a.budget_fraction},
         {"target_label", a.target_label},
         {"lambda", a.lambda},
         {"mode", mode_name(a.mode)},
         {"joint_epochs", a.joint_epochs},
         {"roundtrip_period", a.roundtrip_period},
         {"selection", detail::selection_name(a.selection)},
         {"generator_input", detail::generator_input_name(a.generator_input)}};
  j["coverage"] = a.coverage ? Json(*a.coverage) : Json(nullptr);
  j["max_trigger_tokens"] = a.max_trigger_tokens ? Json(*a.max_trigger_tokens) : Json(nullptr);
  j["delta_audit"] = a.delta_audit ? Json(*a.delta_audit) : Json(nullptr);
  return j;
}

inline AttackConfig attack_from_json(const Json& j) {
  detail::FieldReader r(j, "attack");
  AttackConfig a;
  r.read("budget_fraction", a.budget_fraction);
  r.read("target_label", a.target_label);
  r.read("coverage", a.coverage);
  r.read("lambda", a.lambda);
  detail::read_enum(r, "mode", a.mode, parse_mode);
  r.read("max_trigger_tokens", a.max_trigger_tokens);
  r.read("joint_epochs", a.joint_epochs);
  r.read("roundtrip_period", a.roundtrip_period);
  r.read("delta_audit", a.delta_audit);
  detail::read_enum(r, "selection", a.selection, detail::parse_selection);
  detail::read_enum(r, "generator_input", a.generator_input, detail::parse_generator_input);
  r.finish();
  return a;
}

/// Canonical JSON form of a spec: every field materialized, keys sorted (nlohmann::json
/// stores objects in std::map order).
inline Json spec_to_json(const ExperimentSpec& s) {
  Json dataset;
  if (s.dataset.synthetic)
    dataset["synthetic"] = synthetic_to_json(*s.dataset.synthetic);
  else
    dataset = Json{{"nodes", s.dataset.nodes_path}, {"edges", s.dataset.edges_path}};
  Json j;
  j["dataset"] = dataset;
  j["attack"] = s.attack ? attack_to_json(*s.attack) : Json(nullptr);
  j["defense"] = Json{{"kind", defense_name(s.defense.kind)},
                      {"prune",
                       {{"mode", s.defense.prune.mode == ThresholdMode::percentile ? "percentile" : "absolute"},
                        {"value", s.defense.prune.value}}},
                      {"od", {{"k", s.defense.od.k}, {"fraction", s.defense.od.fraction}}}};
  j["target"] = target_name(s.target);
  j["repetitions"] = s.repetitions;
  j["seed"] = s.base_seed;
  j["split"] = Json{{"test", s.split.test}, {"labeled", s.split.labeled}, {"validation", s.split.validation}};
  j["optimizer"] = Json{{"learning_rate", s.optimizer.learning_rate},
                        {"weight_decay", s.optimizer.weight_decay},
                        {"max_epochs", s.optimizer.max_epochs},
                        {"patience", s.optimizer.patience},
                        {"kind", detail::optimizer_name(s.optimizer.kind)}};
  j["model"] = Json{{"hidden", s.model.hidden},
                    {"generator_hidden", s.model.generator_hidden},
                    {"dropout", s.model.dropout}};
  j["text"] = Json{{"vocab_size", s.text.vocab_size}, {"lm_k", s.text.lm_k}};
  return j;
}

/// Parses a spec object. Unknown fields are rejected; absent fields keep their defaults.
/// `extra_root_keys` names root-level keys handled by the caller (paths, verbosity).
inline ExperimentSpec spec_from_json(const Json& j, const std::set<std::string>& extra_root_keys = {}) {
  detail::FieldReader r(j, "");
  for (auto& k : extra_root_keys) r.raw(k);
  ExperimentSpec s;
  if (const Json* d = r.raw("dataset")) {
    detail::FieldReader dr(*d, "dataset");
    if (const Json* syn = dr.raw("synthetic")) s.dataset.synthetic = synthetic_from_json(*syn, "dataset.synthetic");
    dr.read("nodes", s.dataset.nodes_path);
    dr.read("edges", s.dataset.edges_path);
    dr.finish();
  }
  if (const Json* a = r.raw("attack")) s.attack = attack_from_json(*a);
  if (const Json* d = r.raw("defense")) {
    detail::FieldReader dr(*d, "defense");
    detail::read_enum(dr, "kind", s.defense.kind, parse_defense);
    if (const Json* p = dr.raw("prune")) {
      detail::FieldReader pr(*p, "defense.prune");
      detail::read_enum(pr, "mode", s.defense.prune.mode, detail::parse_threshold);
      pr.read("value", s.defense.prune.value);
      pr.finish();
    }
    if (const Json* o = dr.raw("od")) {
      detail::FieldReader orr(*o, "defense.od");
      orr.read("k", s.defense.od.k);
      orr.read("fraction", s.defense.od.fraction);
      orr.finish();
    }
    dr.finish();
  }
  detail::read_enum(r, "target", s.target, parse_target);
  r.read("repetitions", s.repetitions);
  r.read("seed", s.base_seed);
  if (const Json* sp = r.raw("split")) {
    detail::FieldReader sr(*sp, "split");
    sr.read("test", s.split.test);
    sr.read("labeled", s.split.labeled);
    sr.read("validation", s.split.validation);
    sr.finish();
  }
  if (const Json* o = r.raw("optimizer")) {
    detail::FieldReader orr(*o, "optimizer");
    orr.read("learning_rate", s.optimizer.learning_rate);
    orr.read("weight_decay", s.optimizer.weight_decay);
    orr.read("max_epochs", s.optimizer.max_epochs);
    orr.read("patience", s.optimizer.patience);
    detail::read_enum(orr, "kind", s.optimizer.kind, detail::parse_optimizer);
    orr.finish();
  }
  if (const Json* m = r.raw("model")) {
    detail::FieldReader mr(*m, "model");
    mr.read("hidden", s.model.hidden);
    mr.read("generator_hidden", s.model.generator_hidden);
    mr.read("dropout", s.model.dropout);
    mr.finish();
  }
  if (const Json* t = r.raw("text")) {
    detail::FieldReader tr(*t, "text");
    tr.read("vocab_size", s.text.vocab_size);
    tr.read("lm_k", s.text.lm_k);
    tr.finish();
  }
  r.finish();
  return s;
}

/// FNV-1a 64 over the compact dump of the canonical spec, as 16 hex digits.
inline std::string config_hash(const ExperimentSpec& s) {
  const std::string canon = spec_to_json(s).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canon) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace tagbd
