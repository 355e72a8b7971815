#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape owns every value produced during a forward pass. Each primitive
// appends one node holding its output and a closure that scatters the
// node's adjoint into its parents. Nodes are appended in evaluation order,
// so a single reverse sweep from the root is a valid topological traversal.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "volcast/error.hpp"
#include "volcast/special.hpp"
#include "volcast/tensor.hpp"

namespace volcast::ad {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while its tape lives.
class Var {
 public:
  Var() = default;

  Tape& tape() const {
    if (!tape_) throw ContractError("use of an unbound Var");
    return *tape_;
  }
  std::size_t id() const noexcept { return id_; }
  bool bound() const noexcept { return tape_ != nullptr; }

  const Tensor& value() const;
  /// Adjoint after Tape::backward. Throws if the node does not require grad.
  const Tensor& grad() const;
  double item() const { return value().item(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = false) {
    nodes_.push_back(Node{std::move(value), std::nullopt, requires_grad, {}, {}});
    return Var(this, nodes_.size() - 1);
  }

  Var constant(double v) { return leaf(Tensor::matrix(1, 1, v)); }

  /// Appends the result of a primitive. The node requires grad iff any parent does.
  Var record(Tensor value, std::vector<std::size_t> parents, Backward backward) {
    bool needs = false;
    for (auto p : parents) needs = needs || nodes_.at(p).requires_grad;
    if (!needs) {
      parents.clear();
      backward = nullptr;
    }
    nodes_.push_back(Node{std::move(value), std::nullopt, needs, std::move(parents), std::move(backward)});
    return Var(this, nodes_.size() - 1);
  }

  /// Accumulates d(root)/d(node) into every node that requires grad.
  void backward(const Var& root) {
    if (&root.tape() != this) throw ContractError("backward root belongs to another tape");
    const Tensor& rv = nodes_.at(root.id()).value;
    if (rv.size() != 1) {
      throw ContractError("backward requires a scalar root, got shape " +
                          Tensor::shape_string(rv.shape()));
    }
    for (auto& n : nodes_) {
      if (n.requires_grad) n.grad = n.value.zeros_like();
    }
    if (!nodes_[root.id()].requires_grad) return;
    (*nodes_[root.id()].grad)[0] = 1.0;
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward) n.backward(*this, i);
    }
  }

  const Tensor& value(std::size_t i) const { return nodes_.at(i).value; }
  bool requires_grad(std::size_t i) const { return nodes_.at(i).requires_grad; }

  const Tensor& grad(std::size_t i) const {
    const Node& n = nodes_.at(i);
    if (!n.requires_grad) throw ContractError("node does not require grad");
    if (!n.grad) throw ContractError("grad requested before backward");
    return *n.grad;
  }

  /// Mutable adjoint of node i, or nullptr if it does not participate.
  Tensor* grad_slot(std::size_t i) {
    Node& n = nodes_[i];
    if (!n.requires_grad) return nullptr;
    if (!n.grad) n.grad = n.value.zeros_like();
    return &*n.grad;
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Tensor value;
    std::optional<Tensor> grad;
    bool requires_grad;
    std::vector<std::size_t> parents;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape().value(id_); }
inline const Tensor& Var::grad() const { return tape().grad(id_); }

namespace detail {

inline Tape& same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw ContractError("operands live on different tapes");
  return a.tape();
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + Tensor::shape_string(a.shape()) +
                     " vs " + Tensor::shape_string(b.shape()));
  }
}

/// Elementwise y = f(x) with dy/dx = df(x, y).
template <class F, class DF>
Var unary(const Var& x, F f, DF df) {
  Tape& tape = x.tape();
  const Tensor& xv = x.value();
  Tensor out = xv.zeros_like();
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  const std::size_t xi = x.id();
  return tape.record(std::move(out), {xi}, [xi, df](Tape& t, std::size_t self) {
    const Tensor& g = *t.grad_slot(self);
    const Tensor& xv = t.value(xi);
    const Tensor& yv = t.value(self);
    Tensor* gx = t.grad_slot(xi);
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * df(xv[i], yv[i]);
  });
}

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMajor>;
using Map = Eigen::Map<RowMajor>;

}  // namespace detail

// ---- elementwise binary ----------------------------------------------------

inline Var add(const Var& a, const Var& b) {
  Tape& tape = detail::same_tape(a, b);
  detail::require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const auto ai = a.id(), bi = b.id();
  return tape.record(std::move(out), {ai, bi}, [ai, bi](Tape& t, std::size_t self) {
    const Tensor& g = *t.grad_slot(self);
    for (auto p : {ai, bi}) {
      if (Tensor* gp = t.grad_slot(p)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gp)[i] += g[i];
      }
    }
  });
}

inline Var sub(const Var& a, const Var& b) {
  Tape& tape = detail::same_tape(a, b);
  detail::require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const auto ai = a.id(), bi = b.id();
  return tape.record(std::move(out), {ai, bi}, [ai, bi](Tape& t, std::size_t self) {
    const Tensor& g = *t.grad_slot(self);
    if (Tensor* ga = t.grad_slot(ai)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    }
    if (Tensor* gb = t.grad_slot(bi)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  Tape& tape = detail::same_tape(a, b);
  detail::require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const auto ai = a.id(), bi = b.id();
  return tape.record(std::move(out), {ai, bi}, [ai, bi](Tape& t, std::size_t self) {
    const Tensor& g = *t.grad_slot(self);
    const Tensor& av = t.value(ai);
    const Tensor& bv = t.value(bi);
    if (Tensor* ga = t.grad_slot(ai)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
    }
    if (Tensor* gb = t.grad_slot(bi)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
    }
  });
}

inline Var div(const Var& a, const Var& b) {
  Tape& tape = detail::same_tape(a, b);
  detail::require_same_shape(a.value(), b.value(), "div");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= bv[i];
  const auto ai = a.id(), bi = b.id();
  return tape.record(std::move(out), {ai, bi}, [ai, bi](Tape& t, std::size_t self) {
    const Tensor& g = *t.grad_slot(self);
    const Tensor& bv = t.value(bi);
    const Tensor& yv = t.value(self);
    if (Tensor* ga = t.grad_slot(ai)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] / bv[i];
    }
    if (Tensor* gb = t.grad_slot(bi)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i] * yv[i] / bv[i];
    }
  });
}

// ---- scalar affine -----------------------------------------------------------

inline Var scale(const Var& x, double c) {
  return detail::unary(x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Var add_scalar(const Var& x, double c) {
  return detail::unary(x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

inline Var neg(const Var& x) { return scale(x, -1.0); }

// ---- row broadcast -----------------------------------------------------------

/// x (B x C) + r (1 x C), r added to every row.
inline Var add_row(const Var& x, const Var& r) {
  Tape& tape = detail::same_tape(x, r);
  const Tensor& xv = x.value();
  const Tensor& rv = r.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (rv.rows() != 1 || rv.cols() != cols) {
    throw ShapeError("add_row: row of shape " + Tensor::shape_string(rv.shape()) +
                     " cannot broadcast over " + Tensor::shape_string(xv.shape()));
  }
  Tensor out = xv;
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] += rv[j];
  const auto xi = x.id(), ri = r.id();
  return tape.record(std::move(out), {xi, ri}, [xi, ri, rows, cols](Tape& t, std::size_t self) {
    const Tensor& g = *t.grad_slot(self);
    if (Tensor* gx = t.grad_slot(xi)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
    }
    if (Tensor* gr = t.grad_slot(ri)) {
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) (*gr)[j] += g[i * cols + j];
    }
  });
}

/// x (B x C) * r (1 x C), elementwise per row.
inline Var mul_row(const Var& x, const Var& r) {
  Tape& tape = detail::same_tape(x, r);
  const Tensor& xv = x.value();
  const Tensor& rv = r.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (rv.rows() != 1 || rv.cols() != cols) {
    throw ShapeError("mul_row: row of shape " + Tensor::shape_string(rv.shape()) +
                     " cannot broadcast over " + Tensor::shape_string(xv.shape()));
  }
  Tensor out = xv;
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] *= rv[j];
  const auto xi = x.id(), ri = r.id();
  return tape.record(std::move(out), {xi, ri}, [xi, ri, rows, cols](Tape& t, std::size_t self) {
    const Tensor& g = *t.grad_slot(self);
    const Tensor& xv = t.value(xi);
    const Tensor& rv = t.value(ri);
    if (Tensor* gx = t.grad_slot(xi)) {
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) (*gx)[i * cols + j] += g[i * cols + j] * rv[j];
    }
    if (Tensor* gr = t.grad_slot(ri)) {
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) (*gr)[j] += g[i * cols + j] * xv[i * cols + j];
    }
  });
}

// ---- linear algebra ------------------------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
  Tape& tape = detail::same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  if (bv.rows() != k) {
    throw ShapeError("matmul: inner dimensions differ, " + Tensor::shape_string(av.shape()) +
                     " x " + Tensor::shape_string(bv.shape()));
  }
  Tensor out = Tensor::matrix(m, n);
  detail::Map(out.data(), m, n).noalias() = detail::MapC(av.data(), m, k) * detail::MapC(bv.data(), k, n);
  const auto ai = a.id(), bi = b.id();
  return tape.record(std::move(out), {ai, bi}, [ai, bi, m, k, n](Tape& t, std::size_t self) {
    detail::MapC g(t.grad_slot(self)->data(), m, n);
    if (Tensor* ga = t.grad_slot(ai)) {
      detail::Map(ga->data(), m, k).noalias() += g * detail::MapC(t.value(bi).data(), k, n).transpose();
    }
    if (Tensor* gb = t.grad_slot(bi)) {
      detail::Map(gb->data(), k, n).noalias() += detail::MapC(t.value(ai).data(), m, k).transpose() * g;
    }
  });
}

inline Var transpose(const Var& x) {
  Tape& tape = x.tape();
  const Tensor& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  Tensor out = Tensor::matrix(c, r);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
  const auto xi = x.id();
  return tape.record(std::move(out), {xi}, [xi, r, c](Tape& t, std::size_t self) {
    const Tensor& g = *t.grad_slot(self);
    Tensor* gx = t.grad_slot(xi);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) (*gx)[i * c + j] += g[j * r + i];
  });
}

// ---- reductions -------------------------------------------------------------------

/// Sum of all elements, as a 1 x 1 tensor.
inline Var sum(const Var& x) {
  Tape& tape = x.tape();
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  const auto xi = x.id();
  return tape.record(Tensor::matrix(1, 1, s), {xi}, [xi](Tape& t, std::size_t self) {
    const double g = (*t.grad_slot(self))[0];
    Tensor* gx = t.grad_slot(xi);
    for (auto& v : gx->values()) v += g;
  });
}

inline Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

/// Column sums: (B x C) -> (1 x C).
inline Var sum_rows(const Var& x) {
  Tape& tape = x.tape();
  const Tensor& xv = x.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  Tensor out = Tensor::matrix(1, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j] += xv[i * cols + j];
  const auto xi = x.id();
  return tape.record(std::move(out), {xi}, [xi, rows, cols](Tape& t, std::size_t self) {
    const Tensor& g = *t.grad_slot(self);
    Tensor* gx = t.grad_slot(xi);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) (*gx)[i * cols + j] += g[j];
  });
}

inline Var mean_rows(const Var& x) { return scale(sum_rows(x), 1.0 / static_cast<double>(x.rows())); }

// ---- elementwise unary ---------------------------------------------------------------

inline Var exp(const Var& x) {
  return detail::unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Var log(const Var& x) {
  for (double v : x.value().values()) {
    if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
  }
  return detail::unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Var square(const Var& x) {
  return detail::unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

inline Var sqrt(const Var& x) {
  for (double v : x.value().values()) {
    if (!(v > 0.0)) throw DomainError("sqrt of non-positive value " + std::to_string(v));
  }
  return detail::unary(x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

/// |x|; the adjoint at 0 is taken as 0.
inline Var abs(const Var& x) {
  return detail::unary(
      x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

inline Var tanh(const Var& x) {
  return detail::unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid(const Var& x) {
  return detail::unary(x, [](double v) { return volcast::sigmoid(v); },
                       [](double, double y) { return y * (1.0 - y); });
}

inline Var softplus(const Var& x) {
  return detail::unary(x, [](double v) { return volcast::softplus(v); },
                       [](double v, double) { return volcast::sigmoid(v); });
}

inline Var relu(const Var& x) {
  return detail::unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
                       [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

/// log Gamma, with digamma as adjoint.
inline Var lgamma(const Var& x) {
  for (double v : x.value().values()) {
    if (!(v > 0.0)) throw DomainError("log_gamma of non-positive value " + std::to_string(v));
  }
  return detail::unary(x, [](double v) { return std::lgamma(v); },
                       [](double v, double) { return volcast::digamma(v); });
}

// ---- structural -------------------------------------------------------------------------

/// Columns [begin, begin + count) of a rank-2 tensor.
inline Var slice_cols(const Var& x, std::size_t begin, std::size_t count) {
  Tape& tape = x.tape();
  const Tensor& xv = x.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (count == 0 || begin + count > cols) {
    throw ShapeError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for " + std::to_string(cols) + " columns");
  }
  Tensor out = Tensor::matrix(rows, count);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = xv[i * cols + begin + j];
  const auto xi = x.id();
  return tape.record(std::move(out), {xi}, [xi, rows, cols, begin, count](Tape& t, std::size_t self) {
    const Tensor& g = *t.grad_slot(self);
    Tensor* gx = t.grad_slot(xi);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < count; ++j) (*gx)[i * cols + begin + j] += g[i * count + j];
  });
}

/// Horizontal concatenation of equally tall tensors.
inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_cols of nothing");
  Tape& tape = parts.front().tape();
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  std::vector<std::size_t> ids, widths;
  for (const auto& p : parts) {
    detail::same_tape(parts.front(), p);
    if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ");
    ids.push_back(p.id());
    widths.push_back(p.cols());
    cols += p.cols();
  }
  Tensor out = Tensor::matrix(rows, cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const Tensor& v = p.value();
    const std::size_t w = v.cols();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < w; ++j) out[i * cols + offset + j] = v[i * w + j];
    offset += w;
  }
  return tape.record(std::move(out), ids, [ids, widths, rows, cols](Tape& t, std::size_t self) {
    const Tensor& g = *t.grad_slot(self);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const std::size_t w = widths[k];
      if (Tensor* gp = t.grad_slot(ids[k])) {
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < w; ++j) (*gp)[i * w + j] += g[i * cols + offset + j];
      }
      offset += w;
    }
  });
}

// ---- operator sugar ------------------------------------------------------------------------

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator+(const Var& a, double c) { return add_scalar(a, c); }
inline Var operator+(double c, const Var& a) { return add_scalar(a, c); }
inline Var operator-(const Var& a, double c) { return add_scalar(a, -c); }
inline Var operator-(double c, const Var& a) { return add_scalar(neg(a), c); }
inline Var operator*(const Var& a, double c) { return scale(a, c); }
inline Var operator*(double c, const Var& a) { return scale(a, c); }
inline Var operator/(const Var& a, double c) { return scale(a, 1.0 / c); }

// ---- gradient checking ------------------------------------------------------------------------

/// Scalar-valued function of several tensors, built on the given tape.
using MultiFunction = std::function<Var(Tape&, const std::vector<Var>&)>;
using Function = std::function<Var(Tape&, const Var&)>;

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
inline double grad_check(const MultiFunction& f, const std::vector<Tensor>& inputs, double step) {
  auto evaluate = [&](const std::vector<Tensor>& xs) {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& x : xs) leaves.push_back(tape.leaf(x, false));
    const double v = f(tape, leaves).item();
    if (!std::isfinite(v)) throw EvaluationError("grad_check: function value is not finite");
    return v;
  };

  Tape tape;
  std::vector<Var> leaves;
  for (const auto& x : inputs) leaves.push_back(tape.leaf(x, true));
  Var root = f(tape, leaves);
  if (!std::isfinite(root.item())) throw EvaluationError("grad_check: function value is not finite");
  tape.backward(root);

  double worst = 0.0;
  std::vector<Tensor> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor& analytic = leaves[k].grad();
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double x0 = inputs[k][i];
      probe[k][i] = x0 + step;
      const double up = evaluate(probe);
      probe[k][i] = x0 - step;
      const double down = evaluate(probe);
      probe[k][i] = x0;
      const double numeric = (up - down) / (2.0 * step);
      const double err = std::fabs(analytic[i] - numeric) / std::max(1.0, std::fabs(analytic[i]));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

inline double grad_check(const Function& f, const Tensor& x, double step) {
  return grad_check([&f](Tape& t, const std::vector<Var>& v) { return f(t, v[0]); },
                    std::vector<Tensor>{x}, step);
}

}  // namespace volcast::ad
