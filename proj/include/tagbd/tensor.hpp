#pragma once

// Dense row-major matrices and a reverse-mode tape over a small operation set.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tagbd/errors.hpp"
#include "tagbd/graph.hpp"
#include "tagbd/rng.hpp"

namespace tagbd {

/// Rank <= 2 array of doubles in row-major order. Vectors are 1 x n, scalars 1 x 1.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) throw ShapeError("tensor data length differs from rows * cols");
  }

  static Tensor scalar(double v) { return Tensor(1, 1, v); }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  std::string shape_str() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double item() const {
    if (data_.size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str());
    return data_[0];
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

/// Records operations in execution order; backward() replays them once in reverse.
/// Sparse operators passed to spmm must outlive the tape.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Var constant(Tensor value) { return push(std::move(value), false, {}); }
  Var variable(Tensor value) { return push(std::move(value), true, {}); }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient of the last backward() target with respect to v (zeros if unreached).
  Tensor grad(Var v) const {
    const auto& n = nodes_.at(v.id);
    return n.grad.size() ? n.grad : Tensor(n.value.rows(), n.value.cols());
  }

  /// Records an op result. `fn` runs during backward only when some input needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    bool needs = false;
    for (Var in : inputs) needs = needs || requires_grad(in);
    return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{});
  }

  /// Adds `g` into the gradient buffer of v when v participates in differentiation.
  void accumulate(Var v, const Tensor& g) {
    auto& n = nodes_.at(v.id);
    if (!n.requires_grad) return;
    if (!g.same_shape(n.value)) throw ShapeError("gradient shape mismatch");
    if (!n.grad.size()) {
      n.grad = g;
      return;
    }
    auto dst = n.grad.values();
    auto src = g.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  void backward(Var loss) {
    if (value(loss).size() != 1) throw ShapeError("backward() needs a scalar loss");
    for (auto& n : nodes_) n.grad = Tensor();
    if (!requires_grad(loss)) return;
    nodes_[loss.id].grad = Tensor::scalar(1.0);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.backward && n.grad.size()) n.backward(*this, nodes_[i].grad);
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Tensor value, bool needs, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Tensor(), needs, std::move(fn)});
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Kernels (no tape)

namespace kernel {

/// C = A * B, skipping zero entries of A (BOW features are sparse).
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: " + a.shape_str() + " * " + b.shape_str());
  Tensor c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out = c.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double s = a(i, k);
      if (s == 0.0) continue;
      auto in = b.row(k);
      for (std::size_t j = 0; j < out.size(); ++j) out[j] += s * in[j];
    }
  }
  return c;
}

/// C = A * B^T.
inline Tensor matmul_bt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) throw ShapeError("matmul_bt: " + a.shape_str() + " * T" + b.shape_str());
  Tensor c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ar = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto br = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < ar.size(); ++k) s += ar[k] * br[k];
      c(i, j) = s;
    }
  }
  return c;
}

/// C = A^T * B, skipping zero entries of A.
inline Tensor matmul_at(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) throw ShapeError("matmul_at: T" + a.shape_str() + " * " + b.shape_str());
  Tensor c(a.cols(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto in = b.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double s = a(i, k);
      if (s == 0.0) continue;
      auto out = c.row(k);
      for (std::size_t j = 0; j < out.size(); ++j) out[j] += s * in[j];
    }
  }
  return c;
}

inline Tensor spmm(const SparseMatrix& m, const Tensor& x) {
  if (m.cols != x.rows()) throw ShapeError("spmm: sparse cols differ from dense rows");
  Tensor c(m.rows, x.cols());
  for (std::size_t i = 0; i < m.rows; ++i) {
    auto out = c.row(i);
    for (std::size_t e = m.offsets[i]; e < m.offsets[i + 1]; ++e) {
      const double v = m.values[e];
      auto in = x.row(m.indices[e]);
      for (std::size_t j = 0; j < out.size(); ++j) out[j] += v * in[j];
    }
  }
  return c;
}

/// M^T * X.
inline Tensor spmm_t(const SparseMatrix& m, const Tensor& x) {
  if (m.rows != x.rows()) throw ShapeError("spmm_t: sparse rows differ from dense rows");
  Tensor c(m.cols, x.cols());
  for (std::size_t i = 0; i < m.rows; ++i) {
    auto in = x.row(i);
    for (std::size_t e = m.offsets[i]; e < m.offsets[i + 1]; ++e) {
      const double v = m.values[e];
      auto out = c.row(m.indices[e]);
      for (std::size_t j = 0; j < out.size(); ++j) out[j] += v * in[j];
    }
  }
  return c;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// Row-wise softmax, max-shifted.
inline Tensor softmax_rows(const Tensor& logits) {
  Tensor p(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto in = logits.row(i);
    auto out = p.row(i);
    const double m = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) z += (out[j] = std::exp(in[j] - m));
    for (double& v : out) v /= z;
  }
  return p;
}

/// Index of the largest entry per row; the lowest index wins ties.
inline std::vector<int> argmax_rows(const Tensor& t) {
  std::vector<int> out(t.rows());
  for (std::size_t i = 0; i < t.rows(); ++i) {
    auto r = t.row(i);
    out[i] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

}  // namespace kernel

// ---------------------------------------------------------------------------
// Differentiable operations

namespace ops {

inline Var matmul(Tape& t, Var a, Var b) {
  Tensor out = kernel::matmul(t.value(a), t.value(b));
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(a)) tp.accumulate(a, kernel::matmul_bt(g, tp.value(b)));
    if (tp.requires_grad(b)) tp.accumulate(b, kernel::matmul_at(tp.value(a), g));
  });
}

/// Sparse-dense product; `m` must outlive the tape.
inline Var spmm(Tape& t, const SparseMatrix& m, Var x) {
  Tensor out = kernel::spmm(m, t.value(x));
  const SparseMatrix* mp = &m;
  return t.record(std::move(out), {x}, [mp, x](Tape& tp, const Tensor& g) {
    tp.accumulate(x, kernel::spmm_t(*mp, g));
  });
}

inline Var add(Tape& t, Var a, Var b) {
  const auto& va = t.value(a);
  const auto& vb = t.value(b);
  if (!va.same_shape(vb)) throw ShapeError("add: " + va.shape_str() + " + " + vb.shape_str());
  Tensor out = va;
  auto o = out.values();
  auto bv = vb.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

inline Var scale(Tape& t, Var a, double s) {
  Tensor out = t.value(a);
  for (double& v : out.values()) v *= s;
  return t.record(std::move(out), {a}, [a, s](Tape& tp, const Tensor& g) {
    Tensor d = g;
    for (double& v : d.values()) v *= s;
    tp.accumulate(a, d);
  });
}

inline Var relu(Tape& t, Var a) {
  Tensor out = t.value(a);
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return t.record(std::move(out), {a}, [a](Tape& tp, const Tensor& g) {
    Tensor d = g;
    auto x = tp.value(a).values();
    auto dv = d.values();
    for (std::size_t i = 0; i < dv.size(); ++i)
      if (!(x[i] > 0.0)) dv[i] = 0.0;
    tp.accumulate(a, d);
  });
}

/// Inverted dropout: kept entries are scaled by 1 / (1 - rate). Masks come from `rng`.
inline Var dropout(Tape& t, Var a, double rate, Rng& rng) {
  if (rate <= 0.0) return a;
  if (rate >= 1.0) throw ConfigError("dropout rate must be < 1");
  const auto& x = t.value(a);
  Tensor mask(x.rows(), x.cols());
  const double keep_scale = 1.0 / (1.0 - rate);
  for (double& m : mask.values()) m = rng.uniform() < rate ? 0.0 : keep_scale;
  Tensor out = x;
  auto o = out.values();
  auto mv = mask.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= mv[i];
  return t.record(std::move(out), {a}, [a, mask = std::move(mask)](Tape& tp, const Tensor& g) {
    Tensor d = g;
    auto dv = d.values();
    auto mv = mask.values();
    for (std::size_t i = 0; i < dv.size(); ++i) dv[i] *= mv[i];
    tp.accumulate(a, d);
  });
}

inline Var row_log_softmax(Tape& t, Var a) {
  const auto& x = t.value(a);
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto in = x.row(i);
    const double m = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (double v : in) z += std::exp(v - m);
    const double lse = m + std::log(z);
    auto o = out.row(i);
    for (std::size_t j = 0; j < in.size(); ++j) o[j] = in[j] - lse;
  }
  return t.record(std::move(out), {a}, [a](Tape& tp, const Tensor& g) {
    // d/dx_j = g_j - softmax_j * sum(g)
    Tensor d = kernel::softmax_rows(tp.value(a));
    for (std::size_t i = 0; i < d.rows(); ++i) {
      auto gr = g.row(i);
      double total = 0.0;
      for (double v : gr) total += v;
      auto dr = d.row(i);
      for (std::size_t j = 0; j < dr.size(); ++j) dr[j] = gr[j] - dr[j] * total;
    }
    tp.accumulate(a, d);
  });
}

inline Var gather_rows(Tape& t, Var a, std::span<const std::size_t> rows) {
  const auto& x = t.value(a);
  Tensor out(rows.size(), x.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= x.rows()) throw ShapeError("gather_rows: row index out of range");
    std::copy_n(x.row(rows[r]).begin(), x.cols(), out.row(r).begin());
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return t.record(std::move(out), {a}, [a, idx = std::move(idx)](Tape& tp, const Tensor& g) {
    const auto& xv = tp.value(a);
    Tensor d(xv.rows(), xv.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      auto dst = d.row(idx[r]);
      auto src = g.row(r);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
    tp.accumulate(a, d);
  });
}

/// Copy of `base` with rows `rows[r]` replaced by row r of `src`. Indices must be distinct.
inline Var replace_rows(Tape& t, Var base, std::span<const std::size_t> rows, Var src) {
  const auto& b = t.value(base);
  const auto& s = t.value(src);
  if (s.rows() != rows.size() || s.cols() != b.cols()) throw ShapeError("replace_rows: shape mismatch");
  Tensor out = b;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= b.rows()) throw ShapeError("replace_rows: row index out of range");
    std::copy_n(s.row(r).begin(), s.cols(), out.row(rows[r]).begin());
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return t.record(std::move(out), {base, src}, [base, src, idx = std::move(idx)](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(base)) {
      Tensor d = g;
      for (auto r : idx) std::fill(d.row(r).begin(), d.row(r).end(), 0.0);
      tp.accumulate(base, d);
    }
    if (tp.requires_grad(src)) {
      Tensor d(idx.size(), g.cols());
      for (std::size_t r = 0; r < idx.size(); ++r) std::copy_n(g.row(idx[r]).begin(), g.cols(), d.row(r).begin());
      tp.accumulate(src, d);
    }
  });
}

/// Scales every nonzero row to unit Euclidean norm; zero rows stay zero.
inline Var row_normalize(Tape& t, Var a) {
  const auto& x = t.value(a);
  Tensor out = x;
  std::vector<double> norms(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    norms[i] = kernel::norm(x.row(i));
    if (norms[i] > 0.0)
      for (double& v : out.row(i)) v /= norms[i];
  }
  return t.record(out, {a}, [a, y = out, norms = std::move(norms)](Tape& tp, const Tensor& g) {
    Tensor d(y.rows(), y.cols());
    for (std::size_t i = 0; i < y.rows(); ++i) {
      if (!(norms[i] > 0.0)) continue;
      auto yr = y.row(i);
      auto gr = g.row(i);
      const double proj = kernel::dot(yr, gr);
      auto dr = d.row(i);
      for (std::size_t j = 0; j < dr.size(); ++j) dr[j] = (gr[j] - yr[j] * proj) / norms[i];
    }
    tp.accumulate(a, d);
  });
}

/// Forward value `projected`, gradient passed to `a` unchanged (straight-through estimator).
inline Var straight_through(Tape& t, Var a, Tensor projected) {
  if (!projected.same_shape(t.value(a))) throw ShapeError("straight_through: shape mismatch");
  return t.record(std::move(projected), {a}, [a](Tape& tp, const Tensor& g) { tp.accumulate(a, g); });
}

inline Var sum(Tape& t, Var a) {
  double s = 0.0;
  for (double v : t.value(a).values()) s += v;
  return t.record(Tensor::scalar(s), {a}, [a](Tape& tp, const Tensor& g) {
    const auto& x = tp.value(a);
    tp.accumulate(a, Tensor(x.rows(), x.cols(), g.item()));
  });
}

/// Mean over rows of -logp[i, labels[i]].
inline Var nll_mean(Tape& t, Var logp, std::span<const int> labels) {
  const auto& lp = t.value(logp);
  if (lp.rows() != labels.size()) throw ShapeError("nll: one label per row required");
  if (lp.rows() == 0) throw UndefinedMetricError("cross-entropy over an empty row set");
  double s = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= lp.cols())
      throw ShapeError("nll: label outside class range");
    s -= lp(i, static_cast<std::size_t>(labels[i]));
  }
  const double n = static_cast<double>(labels.size());
  std::vector<int> ys(labels.begin(), labels.end());
  return t.record(Tensor::scalar(s / n), {logp}, [logp, ys = std::move(ys), n](Tape& tp, const Tensor& g) {
    const auto& lpv = tp.value(logp);
    Tensor d(lpv.rows(), lpv.cols());
    for (std::size_t i = 0; i < ys.size(); ++i) d(i, static_cast<std::size_t>(ys[i])) = -g.item() / n;
    tp.accumulate(logp, d);
  });
}

/// Mean negative log-softmax probability of the true class over all rows of `logits`.
inline Var cross_entropy(Tape& t, Var logits, std::span<const int> labels) {
  return nll_mean(t, row_log_softmax(t, logits), labels);
}

/// Sum over rows of 1 - cos(a_i, b_i). A zero row has cosine 0 with anything.
inline Var cosine_sim_loss(Tape& t, Var a, Var b) {
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  if (!av.same_shape(bv)) throw ShapeError("cosine_sim_loss: " + av.shape_str() + " vs " + bv.shape_str());
  double loss = 0.0;
  for (std::size_t i = 0; i < av.rows(); ++i) {
    const double na = kernel::norm(av.row(i)), nb = kernel::norm(bv.row(i));
    const double c = (na > 0.0 && nb > 0.0) ? kernel::dot(av.row(i), bv.row(i)) / (na * nb) : 0.0;
    loss += 1.0 - c;
  }
  return t.record(Tensor::scalar(loss), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    const auto& x = tp.value(a);
    const auto& y = tp.value(b);
    Tensor da(x.rows(), x.cols()), db(y.rows(), y.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const double nx = kernel::norm(x.row(i)), ny = kernel::norm(y.row(i));
      if (!(nx > 0.0 && ny > 0.0)) continue;
      const double c = kernel::dot(x.row(i), y.row(i)) / (nx * ny);
      auto xr = x.row(i);
      auto yr = y.row(i);
      auto dar = da.row(i);
      auto dbr = db.row(i);
      for (std::size_t j = 0; j < xr.size(); ++j) {
        dar[j] = -g.item() * (yr[j] / (nx * ny) - c * xr[j] / (nx * nx));
        dbr[j] = -g.item() * (xr[j] / (nx * ny) - c * yr[j] / (ny * ny));
      }
    }
    tp.accumulate(a, da);
    tp.accumulate(b, db);
  });
}

}  // namespace ops
}  // namespace tagbd
