#pragma once

// Optimizers, the full-batch node-classifier training loop, and model checkpoints.

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "tagbd/errors.hpp"
#include "tagbd/graph.hpp"
#include "tagbd/nn.hpp"
#include "tagbd/rng.hpp"
#include "tagbd/tensor.hpp"

namespace tagbd {

enum class OptimizerKind { gradient_descent, adam };

struct OptimizerConfig {
  double learning_rate = 0.01;
  double weight_decay = 0.0005;
  std::size_t max_epochs = 300;
  std::size_t patience = 50;
  OptimizerKind kind = OptimizerKind::adam;
};

/// p <- p - lr * (g + wd * p)
inline void gd_step(std::span<Tensor* const> params, std::span<const Tensor> grads, const OptimizerConfig& cfg) {
  if (params.size() != grads.size()) throw ShapeError("gd_step: one gradient per parameter required");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->values();
    auto g = grads[i].values();
    if (p.size() != g.size()) throw ShapeError("gd_step: gradient shape differs from parameter");
    for (std::size_t j = 0; j < p.size(); ++j) p[j] -= cfg.learning_rate * (g[j] + cfg.weight_decay * p[j]);
  }
}

/// Adam on the L2-regularized gradient g + wd * p.
class Adam {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  void step(std::span<Tensor* const> params, std::span<const Tensor> grads, const OptimizerConfig& cfg) {
    if (params.size() != grads.size()) throw ShapeError("adam: one gradient per parameter required");
    if (m_.empty()) {
      for (auto* p : params) {
        m_.emplace_back(p->rows(), p->cols());
        v_.emplace_back(p->rows(), p->cols());
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto p = params[i]->values();
      auto g = grads[i].values();
      auto m = m_[i].values();
      auto v = v_[i].values();
      if (p.size() != g.size() || p.size() != m.size()) throw ShapeError("adam: shape changed between steps");
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double gj = g[j] + cfg.weight_decay * p[j];
        m[j] = kBeta1 * m[j] + (1.0 - kBeta1) * gj;
        v[j] = kBeta2 * v[j] + (1.0 - kBeta2) * gj * gj;
        p[j] -= cfg.learning_rate * (m[j] / c1) / (std::sqrt(v[j] / c2) + kEps);
      }
    }
  }

 private:
  std::vector<Tensor> m_, v_;
  std::uint64_t t_ = 0;
};

/// Dispatches to the configured update rule and keeps its state.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {}

  void step(std::span<Tensor* const> params, std::span<const Tensor> grads) {
    if (cfg_.kind == OptimizerKind::adam)
      adam_.step(params, grads, cfg_);
    else
      gd_step(params, grads, cfg_);
  }

  const OptimizerConfig& config() const { return cfg_; }

 private:
  OptimizerConfig cfg_;
  Adam adam_;
};

template <class Model>
std::vector<Tensor*> parameter_pointers(Model& m) {
  std::vector<Tensor*> out;
  for (auto& p : m.parameters()) out.push_back(p.value);
  return out;
}

template <class Model>
struct TrainResult {
  Model model;
  double best_val_accuracy = 0.0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
};

/// Full-batch supervised training on `train_ids` with early stopping on validation accuracy.
/// The returned snapshot is the latest epoch attaining the best validation accuracy;
/// patience counts epochs without a strict improvement. Dropout masks for epoch e come from
/// Rng(derive_seed(seed, e)).
template <class Model>
TrainResult<Model> train_node_classifier(Model model, const GraphOperators& graph, const Tensor& features,
                                         std::span<const int> labels, std::span<const NodeId> train_ids,
                                         std::span<const NodeId> val_ids, const OptimizerConfig& cfg,
                                         std::uint64_t seed) {
  if (train_ids.empty()) throw Error("training needs at least one labeled node");
  if (val_ids.empty()) throw Error("training needs at least one validation node");
  std::vector<int> train_labels;
  for (auto i : train_ids) train_labels.push_back(labels[i]);

  Optimizer opt(cfg);
  TrainResult<Model> result{model, -1.0, 0, 0};
  std::size_t stale = 0;
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    Rng dropout_rng(derive_seed(seed, epoch));
    Tape t;
    auto p = bind_parameters(t, model);
    Var logits = classifier_logits(t, model, p, graph, t.constant(features), true, &dropout_rng);
    Var loss = ops::cross_entropy(t, ops::gather_rows(t, logits, train_ids), train_labels);
    t.backward(loss);
    std::vector<Tensor> grads;
    for (Var v : p) grads.push_back(t.grad(v));
    opt.step(parameter_pointers(model), grads);

    const double acc = accuracy(predict(model, graph, features), labels, val_ids);
    result.epochs_run = epoch + 1;
    if (acc > result.best_val_accuracy) {
      stale = 0;
    } else {
      ++stale;
    }
    if (acc >= result.best_val_accuracy) {
      result.best_val_accuracy = acc;
      result.model = model;
      result.best_epoch = epoch;
    }
    if (stale > cfg.patience) break;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints
//
//   tagbd-checkpoint 1
//   <count>
//   param <name> <rows> <cols>
//   <rows*cols shortest round-trip decimals separated by spaces>
//   ...

inline constexpr std::string_view kCheckpointMagic = "tagbd-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <class Model>
void save_checkpoint(Model& model, std::ostream& out) {
  auto params = model.parameters();
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n' << params.size() << '\n';
  for (auto& p : params) {
    out << "param " << p.name << ' ' << p.value->rows() << ' ' << p.value->cols() << '\n';
    bool first = true;
    for (double v : p.value->values()) {
      if (!first) out << ' ';
      out << format_double(v);
      first = false;
    }
    out << '\n';
  }
}

/// Fills the parameters of `model` in declaration order; names and shapes must match.
template <class Model>
void load_checkpoint(Model& model, std::istream& in) {
  std::string magic;
  int version = 0;
  std::size_t count = 0;
  if (!(in >> magic >> version >> count) || magic != kCheckpointMagic)
    throw ParseError("checkpoint: missing header");
  if (version != kCheckpointVersion) throw ParseError("checkpoint: unsupported version " + std::to_string(version));
  auto params = model.parameters();
  if (count != params.size()) throw ShapeError("checkpoint: parameter count mismatch");
  for (auto& p : params) {
    std::string tag, name;
    std::size_t rows = 0, cols = 0;
    if (!(in >> tag >> name >> rows >> cols) || tag != "param") throw ParseError("checkpoint: bad parameter header");
    if (name != p.name) throw ParseError("checkpoint: expected parameter " + p.name + ", found " + name);
    std::vector<double> data(rows * cols);
    for (double& v : data) {
      std::string tok;
      if (!(in >> tok)) throw ParseError("checkpoint: truncated values for " + name);
      auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (res.ec != std::errc{}) throw ParseError("checkpoint: bad number '" + tok + "'");
    }
    *p.value = Tensor(rows, cols, std::move(data));
  }
}

}  // namespace tagbd
