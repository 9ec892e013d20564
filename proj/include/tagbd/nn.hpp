#pragma once

// GCN / mean-aggregation SAGE classifiers, the MLP trigger generator, and the
// non-differentiable scoring helpers built on them.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tagbd/errors.hpp"
#include "tagbd/graph.hpp"
#include "tagbd/rng.hpp"
#include "tagbd/tensor.hpp"

namespace tagbd {

inline constexpr std::size_t kDefaultHidden = 512;
inline constexpr std::size_t kDefaultGeneratorHidden = 1024;
inline constexpr double kDefaultDropout = 0.5;

struct ModelConfig {
  std::size_t hidden = kDefaultHidden;
  std::size_t generator_hidden = kDefaultGeneratorHidden;
  double dropout = kDefaultDropout;
};

/// Glorot-uniform initialization from a seeded stream.
inline Tensor glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Tensor w(fan_in, fan_out);
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : w.values()) v = rng.uniform(-bound, bound);
  return w;
}

struct NamedParam {
  std::string name;
  Tensor* value;
};

/// Two-layer graph convolution: logits = A relu(A X W1) W2, no biases.
struct GcnModel {
  Tensor w1;  // F x H
  Tensor w2;  // H x C
  double dropout = kDefaultDropout;

  static GcnModel init(std::size_t in, std::size_t hidden, std::size_t classes, Rng& rng,
                       double dropout = kDefaultDropout) {
    GcnModel m;
    m.w1 = glorot(in, hidden, rng);
    m.w2 = glorot(hidden, classes, rng);
    m.dropout = dropout;
    return m;
  }

  std::size_t input_dim() const { return w1.rows(); }
  std::size_t hidden_dim() const { return w1.cols(); }
  std::size_t num_classes() const { return w2.cols(); }

  std::vector<NamedParam> parameters() { return {{"gcn.w1", &w1}, {"gcn.w2", &w2}}; }
};

/// Two-layer GraphSAGE with mean aggregation:
/// h = relu(X Ws1 + mean_nbr(X) Wn1); logits = h Ws2 + mean_nbr(h) Wn2.
struct SageModel {
  Tensor self1, nbr1;  // F x H
  Tensor self2, nbr2;  // H x C
  double dropout = kDefaultDropout;

  static SageModel init(std::size_t in, std::size_t hidden, std::size_t classes, Rng& rng,
                        double dropout = kDefaultDropout) {
    SageModel m;
    m.self1 = glorot(in, hidden, rng);
    m.nbr1 = glorot(in, hidden, rng);
    m.self2 = glorot(hidden, classes, rng);
    m.nbr2 = glorot(hidden, classes, rng);
    m.dropout = dropout;
    return m;
  }

  std::size_t input_dim() const { return self1.rows(); }
  std::size_t num_classes() const { return self2.cols(); }

  std::vector<NamedParam> parameters() {
    return {{"sage.self1", &self1}, {"sage.nbr1", &nbr1}, {"sage.self2", &self2}, {"sage.nbr2", &nbr2}};
  }
};

/// Trigger generator: relu(h W1) W2, bias-free so a zero input maps to a zero embedding.
struct MlpGenerator {
  Tensor w1;  // in x G
  Tensor w2;  // G x F

  static MlpGenerator init(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
    return {glorot(in, hidden, rng), glorot(hidden, out, rng)};
  }

  std::size_t input_dim() const { return w1.rows(); }
  std::size_t output_dim() const { return w2.cols(); }

  std::vector<NamedParam> parameters() { return {{"generator.w1", &w1}, {"generator.w2", &w2}}; }
};

/// Copies every parameter onto the tape as a differentiable leaf (or a constant).
template <class Model>
std::vector<Var> bind_parameters(Tape& t, Model& model, bool trainable = true) {
  std::vector<Var> out;
  for (auto& p : model.parameters()) out.push_back(trainable ? t.variable(*p.value) : t.constant(*p.value));
  return out;
}

struct GcnOutput {
  Var logits;
  Var hidden;  // post-activation, pre-dropout N x H
};

inline GcnOutput gcn_forward(Tape& t, const GcnModel& m, std::span<const Var> p, const GraphOperators& g,
                             Var x, bool train, Rng* dropout_rng) {
  if (t.value(x).cols() != m.input_dim()) throw ShapeError("gcn: feature width differs from W1 rows");
  Var agg = ops::spmm(t, g.normalized, x);
  Var hidden = ops::relu(t, ops::matmul(t, agg, p[0]));
  Var h = (train && dropout_rng) ? ops::dropout(t, hidden, m.dropout, *dropout_rng) : hidden;
  Var logits = ops::matmul(t, ops::spmm(t, g.normalized, h), p[1]);
  return {logits, hidden};
}

inline Var sage_forward(Tape& t, const SageModel& m, std::span<const Var> p, const GraphOperators& g, Var x,
                        bool train, Rng* dropout_rng) {
  if (t.value(x).cols() != m.input_dim()) throw ShapeError("sage: feature width differs from weight rows");
  Var h = ops::relu(t, ops::add(t, ops::matmul(t, x, p[0]), ops::matmul(t, ops::spmm(t, g.mean, x), p[1])));
  if (train && dropout_rng) h = ops::dropout(t, h, m.dropout, *dropout_rng);
  return ops::add(t, ops::matmul(t, h, p[2]), ops::matmul(t, ops::spmm(t, g.mean, h), p[3]));
}

inline Var generator_forward(Tape& t, std::span<const Var> p, Var h) {
  return ops::matmul(t, ops::relu(t, ops::matmul(t, h, p[0])), p[1]);
}

// Uniform entry points used by the generic trainer.
inline Var classifier_logits(Tape& t, const GcnModel& m, std::span<const Var> p, const GraphOperators& g, Var x,
                             bool train, Rng* rng) {
  return gcn_forward(t, m, p, g, x, train, rng).logits;
}
inline Var classifier_logits(Tape& t, const SageModel& m, std::span<const Var> p, const GraphOperators& g, Var x,
                             bool train, Rng* rng) {
  return sage_forward(t, m, p, g, x, train, rng);
}

/// Evaluation-mode logits.
template <class Model>
Tensor predict_logits(const Model& model, const GraphOperators& g, const Tensor& x) {
  Tape t;
  Model copy = model;
  auto p = bind_parameters(t, copy, false);
  return t.value(classifier_logits(t, copy, p, g, t.constant(x), false, nullptr));
}

/// Evaluation-mode hidden representation of a GCN (N x H).
inline Tensor gcn_hidden(const GcnModel& model, const GraphOperators& g, const Tensor& x) {
  Tape t;
  GcnModel copy = model;
  auto p = bind_parameters(t, copy, false);
  return t.value(gcn_forward(t, copy, p, g, t.constant(x), false, nullptr).hidden);
}

inline Tensor generate_embeddings(const MlpGenerator& gen, const Tensor& h) {
  if (h.cols() != gen.input_dim()) throw ShapeError("generator: input width differs from W1 rows");
  Tape t;
  MlpGenerator copy = gen;
  auto p = bind_parameters(t, copy, false);
  return t.value(generator_forward(t, p, t.constant(h)));
}

template <class Model>
std::vector<int> predict(const Model& model, const GraphOperators& g, const Tensor& x) {
  return kernel::argmax_rows(predict_logits(model, g, x));
}

/// Shannon entropy (natural log) of a probability vector, with 0 log 0 = 0.
inline double entropy(std::span<const double> p) {
  double total = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw Error("entropy: probabilities must be non-negative");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9) throw Error("entropy: probabilities must sum to 1");
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h < 0.0 ? 0.0 : h;
}

inline double accuracy(std::span<const int> predicted, std::span<const int> labels, std::span<const NodeId> ids) {
  if (ids.empty()) throw UndefinedMetricError("accuracy over an empty node set");
  std::size_t hit = 0;
  for (auto i : ids) hit += predicted[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(ids.size());
}

}  // namespace tagbd
