#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nlos/errors.hpp"
#include "nlos/rng.hpp"

namespace nlos::ad {

template <class Real>
using MatX = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;
template <class Real>
using VecX = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

// Flat trainable parameter storage with a named registry. Entries are
// appended, so ranges are disjoint and cover the array exactly.
template <class Real>
class ParamVector {
public:
  struct Entry {
    std::string name;
    std::int64_t offset;
    int rows;
    int cols;
  };

  int add(const std::string& name, int rows, int cols) {
    for (const Entry& e : entries_) {
      if (e.name == name) {
        throw NlosError(ErrorCode::InvariantViolation, "duplicate parameter name: " + name);
      }
    }
    Entry e{name, static_cast<std::int64_t>(values_.size()), rows, cols};
    entries_.push_back(e);
    values_.resize(values_.size() + static_cast<size_t>(rows) * cols, Real(0));
    return static_cast<int>(entries_.size()) - 1;
  }

  int find(const std::string& name) const {
    for (size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].name == name) return static_cast<int>(i);
    }
    throw NlosError(ErrorCode::InvariantViolation, "unknown parameter name: " + name);
  }

  const Entry& entry(int idx) const { return entries_[static_cast<size_t>(idx)]; }
  const std::vector<Entry>& entries() const { return entries_; }

  Eigen::Map<MatX<Real>> view(int idx) {
    const Entry& e = entries_[static_cast<size_t>(idx)];
    return Eigen::Map<MatX<Real>>(values_.data() + e.offset, e.rows, e.cols);
  }
  Eigen::Map<const MatX<Real>> view(int idx) const {
    const Entry& e = entries_[static_cast<size_t>(idx)];
    return Eigen::Map<const MatX<Real>>(values_.data() + e.offset, e.rows, e.cols);
  }

  std::vector<Real>& raw() { return values_; }
  const std::vector<Real>& raw() const { return values_; }
  std::int64_t size() const { return static_cast<std::int64_t>(values_.size()); }

private:
  std::vector<Real> values_;
  std::vector<Entry> entries_;
};

enum class OpKind : std::uint8_t {
  Constant,
  Param,    // leaf view of a ParamVector entry
  Var,      // differentiable leaf not tied to ParamVector (tests)
  Add,
  Sub,
  Mul,      // elementwise
  Div,      // elementwise, guarded
  Neg,
  Exp,
  Log,      // guarded
  Sin,
  Cos,
  Sigmoid,
  Relu,
  Softplus, // c0 = beta
  Abs,
  Sqrt,     // guarded
  Square,
  Max,      // elementwise max(a, b)
  ScaleShift,  // c0 * x + c1
  BroadcastMul,  // a: 1x1 scalar node, b: matrix node
  Affine,   // a: weight (out x in), b: input (in x n), c: bias (out x 1)
  CumsumExclusiveCols,  // running sum down each column, excluding self
  SumAll,   // 1x1
  RowSum,   // (r x c) -> (r x 1)
  ColSum,   // (r x c) -> (1 x c)
  Reshape,  // c0 = rows, c1 = cols (same element order)
  SliceRows,   // c0 = start row, c1 = count
  Clamp,    // clamp(x, c0, c1); zero gradient outside
};

// Reverse-mode tape over matrix-valued nodes. Scalars are 1x1 matrices.
// Affine is the fused layer primitive that carries nearly all of the
// training FLOPs through Eigen GEMM.
template <class Real>
class Tape {
public:
  struct Node {
    OpKind kind;
    int a = -1, b = -1, c = -1;
    Real c0 = Real(0), c1 = Real(0);
    bool needs_grad = false;
    MatX<Real> value;
    MatX<Real> grad;  // allocated during backward
  };

  explicit Tape(const ParamVector<Real>* params = nullptr) : params_(params) {}

  int size() const { return static_cast<int>(nodes_.size()); }
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
  const MatX<Real>& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  Real scalar(int id) const {
    const MatX<Real>& v = value(id);
    if (v.size() != 1) {
      throw NlosError(ErrorCode::ShapeMismatch, "node is not scalar");
    }
    return v(0, 0);
  }

  int constant(MatX<Real> v) { return push(OpKind::Constant, std::move(v), false); }
  int constant(Real v) {
    MatX<Real> m(1, 1);
    m(0, 0) = v;
    return constant(std::move(m));
  }
  int variable(MatX<Real> v) { return push(OpKind::Var, std::move(v), true); }
  int variable(Real v) {
    MatX<Real> m(1, 1);
    m(0, 0) = v;
    return variable(std::move(m));
  }

  int param(int entry_idx) {
    if (!params_) {
      throw NlosError(ErrorCode::InvariantViolation, "tape has no parameter vector");
    }
    MatX<Real> v = params_->view(entry_idx);
    int id = push(OpKind::Param, std::move(v), true);
    nodes_.back().a = entry_idx;
    return id;
  }

  // --- elementwise / structural ops ------------------------------------

  int add(int x, int y) { return binary(OpKind::Add, x, y); }
  int sub(int x, int y) { return binary(OpKind::Sub, x, y); }
  int mul(int x, int y) { return binary(OpKind::Mul, x, y); }
  int max(int x, int y) { return binary(OpKind::Max, x, y); }

  int div(int x, int y) {
    int id = binary(OpKind::Div, x, y);
    guard_finite(id, "div");
    return id;
  }

  int neg(int x) { return unary(OpKind::Neg, x); }
  int exp(int x) { return unary(OpKind::Exp, x); }
  int sin(int x) { return unary(OpKind::Sin, x); }
  int cos(int x) { return unary(OpKind::Cos, x); }
  int sigmoid(int x) { return unary(OpKind::Sigmoid, x); }
  int relu(int x) { return unary(OpKind::Relu, x); }
  int abs(int x) { return unary(OpKind::Abs, x); }
  int square(int x) { return unary(OpKind::Square, x); }

  int log(int x) {
    int id = unary(OpKind::Log, x);
    guard_finite(id, "log");
    return id;
  }
  int sqrt(int x) {
    int id = unary(OpKind::Sqrt, x);
    guard_finite(id, "sqrt");
    return id;
  }
  int softplus(int x, Real beta) {
    int id = unary(OpKind::Softplus, x, beta);
    return id;
  }
  int scale_shift(int x, Real s, Real b) { return unary(OpKind::ScaleShift, x, s, b); }
  int clamp(int x, Real lo, Real hi) { return unary(OpKind::Clamp, x, lo, hi); }

  int broadcast_mul(int scalar_node, int x) {
    if (value(scalar_node).size() != 1) {
      throw NlosError(ErrorCode::ShapeMismatch, "broadcast_mul needs a scalar first input");
    }
    Node n;
    n.kind = OpKind::BroadcastMul;
    n.a = scalar_node;
    n.b = x;
    n.value = value(scalar_node)(0, 0) * value(x).array();
    return push_node(std::move(n));
  }

  int affine(int weight, int input, int bias) {
    const MatX<Real>& w = value(weight);
    const MatX<Real>& x = value(input);
    const MatX<Real>& b = value(bias);
    if (w.cols() != x.rows() || b.rows() != w.rows() || b.cols() != 1) {
      throw NlosError(ErrorCode::ShapeMismatch, "affine shape mismatch");
    }
    Node n;
    n.kind = OpKind::Affine;
    n.a = weight;
    n.b = input;
    n.c = bias;
    n.value.noalias() = w * x;
    n.value.colwise() += b.col(0);
    return push_node(std::move(n));
  }

  int cumsum_exclusive_cols(int x) {
    const MatX<Real>& v = value(x);
    Node n;
    n.kind = OpKind::CumsumExclusiveCols;
    n.a = x;
    n.value.resize(v.rows(), v.cols());
    for (Eigen::Index j = 0; j < v.cols(); ++j) {
      Real run = Real(0);
      for (Eigen::Index i = 0; i < v.rows(); ++i) {
        n.value(i, j) = run;
        run += v(i, j);
      }
    }
    return push_node(std::move(n));
  }

  int sum_all(int x) {
    Node n;
    n.kind = OpKind::SumAll;
    n.a = x;
    n.value.resize(1, 1);
    n.value(0, 0) = value(x).sum();
    return push_node(std::move(n));
  }

  int row_sum(int x) {
    Node n;
    n.kind = OpKind::RowSum;
    n.a = x;
    n.value = value(x).rowwise().sum();
    return push_node(std::move(n));
  }

  int col_sum(int x) {
    Node n;
    n.kind = OpKind::ColSum;
    n.a = x;
    n.value = value(x).colwise().sum();
    return push_node(std::move(n));
  }

  int reshape(int x, int rows, int cols) {
    const MatX<Real>& v = value(x);
    if (rows * static_cast<std::int64_t>(cols) != v.size()) {
      throw NlosError(ErrorCode::ShapeMismatch, "reshape must preserve element count");
    }
    Node n;
    n.kind = OpKind::Reshape;
    n.a = x;
    n.c0 = static_cast<Real>(rows);
    n.c1 = static_cast<Real>(cols);
    n.value = Eigen::Map<const MatX<Real>>(v.data(), rows, cols);
    return push_node(std::move(n));
  }

  int slice_rows(int x, int start, int count) {
    const MatX<Real>& v = value(x);
    if (start < 0 || count < 0 || start + count > v.rows()) {
      throw NlosError(ErrorCode::ShapeMismatch, "slice_rows out of range");
    }
    Node n;
    n.kind = OpKind::SliceRows;
    n.a = x;
    n.c0 = static_cast<Real>(start);
    n.c1 = static_cast<Real>(count);
    n.value = v.middleRows(start, count);
    return push_node(std::move(n));
  }

  // Generic dispatcher used by callers that hold op kinds as data.
  int record(OpKind kind, int a = -1, int b = -1, Real c0 = Real(0), Real c1 = Real(0)) {
    switch (kind) {
      case OpKind::Add: return add(a, b);
      case OpKind::Sub: return sub(a, b);
      case OpKind::Mul: return mul(a, b);
      case OpKind::Div: return div(a, b);
      case OpKind::Max: return max(a, b);
      case OpKind::Neg: return neg(a);
      case OpKind::Exp: return exp(a);
      case OpKind::Log: return log(a);
      case OpKind::Sin: return sin(a);
      case OpKind::Cos: return cos(a);
      case OpKind::Sigmoid: return sigmoid(a);
      case OpKind::Relu: return relu(a);
      case OpKind::Softplus: return softplus(a, c0);
      case OpKind::Abs: return abs(a);
      case OpKind::Sqrt: return sqrt(a);
      case OpKind::Square: return square(a);
      case OpKind::ScaleShift: return scale_shift(a, c0, c1);
      case OpKind::Clamp: return clamp(a, c0, c1);
      case OpKind::BroadcastMul: return broadcast_mul(a, b);
      case OpKind::CumsumExclusiveCols: return cumsum_exclusive_cols(a);
      case OpKind::SumAll: return sum_all(a);
      case OpKind::RowSum: return row_sum(a);
      case OpKind::ColSum: return col_sum(a);
      default:
        throw NlosError(ErrorCode::UsageError, "record: op kind needs dedicated arguments");
    }
  }

  // --- backward ---------------------------------------------------------

  // Gradient of a scalar output node with respect to the parameter vector.
  // Also populates per-node grads for leaf inspection (grad_of).
  VecX<Real> backward(int out) {
    if (value(out).size() != 1) {
      throw NlosError(ErrorCode::ShapeMismatch, "backward output must be scalar");
    }
    for (Node& n : nodes_) n.grad.resize(0, 0);
    VecX<Real> pgrad = VecX<Real>::Zero(params_ ? params_->size() : 0);

    auto& on = nodes_[static_cast<size_t>(out)];
    on.grad = MatX<Real>::Ones(1, 1);

    for (int id = out; id >= 0; --id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (!n.needs_grad || n.grad.size() == 0) continue;
      const MatX<Real>& g = n.grad;
      switch (n.kind) {
        case OpKind::Constant:
        case OpKind::Var:
          break;
        case OpKind::Param: {
          const auto& e = params_->entry(n.a);
          Eigen::Map<MatX<Real>>(pgrad.data() + e.offset, e.rows, e.cols) += g;
          break;
        }
        case OpKind::Add:
          accum(n.a, g);
          accum(n.b, g);
          break;
        case OpKind::Sub:
          accum(n.a, g);
          accum_neg(n.b, g);
          break;
        case OpKind::Mul:
          accum_prod(n.a, g, nodes_[n.b].value);
          accum_prod(n.b, g, nodes_[n.a].value);
          break;
        case OpKind::Div: {
          const MatX<Real>& xa = nodes_[n.a].value;
          const MatX<Real>& xb = nodes_[n.b].value;
          if (wants(n.a)) accum_expr(n.a, g.array() / xb.array());
          if (wants(n.b)) accum_expr(n.b, -g.array() * xa.array() / (xb.array() * xb.array()));
          break;
        }
        case OpKind::Neg:
          accum_neg(n.a, g);
          break;
        case OpKind::Exp:
          accum_prod(n.a, g, n.value);
          break;
        case OpKind::Log:
          if (wants(n.a)) accum_expr(n.a, g.array() / nodes_[n.a].value.array());
          break;
        case OpKind::Sin:
          if (wants(n.a)) accum_expr(n.a, g.array() * nodes_[n.a].value.array().cos());
          break;
        case OpKind::Cos:
          if (wants(n.a)) accum_expr(n.a, -g.array() * nodes_[n.a].value.array().sin());
          break;
        case OpKind::Sigmoid:
          if (wants(n.a)) {
            accum_expr(n.a, g.array() * n.value.array() * (Real(1) - n.value.array()));
          }
          break;
        case OpKind::Relu:
          if (wants(n.a)) {
            accum_expr(n.a,
                       g.array() * (nodes_[n.a].value.array() > Real(0)).template cast<Real>());
          }
          break;
        case OpKind::Softplus:
          if (wants(n.a)) {
            // d softplus_beta / dx = sigmoid(beta x)
            accum_expr(n.a, g.array() * (Real(1) / (Real(1) + (-n.c0 * nodes_[n.a].value.array()).exp())));
          }
          break;
        case OpKind::Abs:
          if (wants(n.a)) {
            accum_expr(n.a, g.array() * nodes_[n.a].value.array().sign());
          }
          break;
        case OpKind::Sqrt:
          if (wants(n.a)) accum_expr(n.a, g.array() / (Real(2) * n.value.array()));
          break;
        case OpKind::Square:
          if (wants(n.a)) accum_expr(n.a, g.array() * Real(2) * nodes_[n.a].value.array());
          break;
        case OpKind::Max:
          if (wants(n.a)) {
            accum_expr(n.a, g.array() * (nodes_[n.a].value.array() >= nodes_[n.b].value.array())
                                            .template cast<Real>());
          }
          if (wants(n.b)) {
            accum_expr(n.b, g.array() * (nodes_[n.a].value.array() < nodes_[n.b].value.array())
                                            .template cast<Real>());
          }
          break;
        case OpKind::ScaleShift:
          if (wants(n.a)) accum_expr(n.a, g.array() * n.c0);
          break;
        case OpKind::Clamp:
          if (wants(n.a)) {
            const auto& x = nodes_[n.a].value.array();
            accum_expr(n.a, g.array() * ((x >= n.c0) && (x <= n.c1)).template cast<Real>());
          }
          break;
        case OpKind::BroadcastMul: {
          if (wants(n.a)) {
            MatX<Real> gs(1, 1);
            gs(0, 0) = (g.array() * nodes_[n.b].value.array()).sum();
            accum(n.a, gs);
          }
          if (wants(n.b)) accum_expr(n.b, g.array() * nodes_[n.a].value(0, 0));
          break;
        }
        case OpKind::Affine: {
          const MatX<Real>& w = nodes_[n.a].value;
          const MatX<Real>& x = nodes_[n.b].value;
          if (wants(n.a)) accum_gemm_abT(n.a, g, x);
          if (wants(n.b)) accum_gemm_aTb(n.b, w, g);
          if (wants(n.c)) {
            MatX<Real> gb = g.rowwise().sum();
            accum(n.c, gb);
          }
          break;
        }
        case OpKind::CumsumExclusiveCols: {
          if (wants(n.a)) {
            // d out[i]/d in[k] = [k < i]  =>  gin[k] = sum_{i>k} g[i]
            const MatX<Real>& gv = g;
            MatX<Real> gin(gv.rows(), gv.cols());
            for (Eigen::Index j = 0; j < gv.cols(); ++j) {
              Real run = Real(0);
              for (Eigen::Index i = gv.rows() - 1; i >= 0; --i) {
                gin(i, j) = run;
                run += gv(i, j);
              }
            }
            accum(n.a, gin);
          }
          break;
        }
        case OpKind::SumAll:
          if (wants(n.a)) {
            accum_uniform(n.a, g(0, 0));
          }
          break;
        case OpKind::RowSum:
          if (wants(n.a)) {
            Node& na = nodes_[n.a];
            ensure_grad(na);
            na.grad.colwise() += g.col(0);
          }
          break;
        case OpKind::ColSum:
          if (wants(n.a)) {
            Node& na = nodes_[n.a];
            ensure_grad(na);
            na.grad.rowwise() += g.row(0);
          }
          break;
        case OpKind::Reshape:
          if (wants(n.a)) {
            Node& na = nodes_[n.a];
            ensure_grad(na);
            Eigen::Map<const MatX<Real>> gm(g.data(), na.value.rows(), na.value.cols());
            na.grad += gm;
          }
          break;
        case OpKind::SliceRows:
          if (wants(n.a)) {
            Node& na = nodes_[n.a];
            ensure_grad(na);
            na.grad.middleRows(static_cast<int>(n.c0), static_cast<int>(n.c1)) += g;
          }
          break;
      }
      // Interior grads are freed as we go; leaves stay readable via grad_of.
      bool leaf = n.kind == OpKind::Var || n.kind == OpKind::Param;
      if (id != out && !leaf) n.grad.resize(0, 0);
    }
    return pgrad;
  }

  // Per-node gradient after backward(); zero matrix if the node was unreached.
  MatX<Real> grad_of(int id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.size() == 0) return MatX<Real>::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  bool all_finite() const {
    for (const Node& n : nodes_) {
      if (!n.value.allFinite()) return false;
    }
    return true;
  }

  const ParamVector<Real>* params() const { return params_; }

private:
  bool wants(int id) const { return id >= 0 && nodes_[static_cast<size_t>(id)].needs_grad; }

  void ensure_grad(Node& n) {
    if (n.grad.size() == 0) {
      n.grad = MatX<Real>::Zero(n.value.rows(), n.value.cols());
    }
  }

  void accum(int id, const MatX<Real>& g) {
    if (!wants(id)) return;
    Node& n = nodes_[static_cast<size_t>(id)];
    ensure_grad(n);
    n.grad += g;
  }
  void accum_neg(int id, const MatX<Real>& g) {
    if (!wants(id)) return;
    Node& n = nodes_[static_cast<size_t>(id)];
    ensure_grad(n);
    n.grad -= g;
  }
  void accum_prod(int id, const MatX<Real>& g, const MatX<Real>& other) {
    if (!wants(id)) return;
    Node& n = nodes_[static_cast<size_t>(id)];
    ensure_grad(n);
    n.grad.array() += g.array() * other.array();
  }
  void accum_uniform(int id, Real g) {
    Node& n = nodes_[static_cast<size_t>(id)];
    ensure_grad(n);
    n.grad.array() += g;
  }
  template <class Expr>
  void accum_expr(int id, const Expr& e) {
    Node& n = nodes_[static_cast<size_t>(id)];
    ensure_grad(n);
    n.grad.array() += e;
  }
  void accum_gemm_abT(int id, const MatX<Real>& g, const MatX<Real>& x) {
    Node& n = nodes_[static_cast<size_t>(id)];
    ensure_grad(n);
    n.grad.noalias() += g * x.transpose();
  }
  void accum_gemm_aTb(int id, const MatX<Real>& w, const MatX<Real>& g) {
    Node& n = nodes_[static_cast<size_t>(id)];
    ensure_grad(n);
    n.grad.noalias() += w.transpose() * g;
  }

  int unary(OpKind kind, int x, Real c0 = Real(0), Real c1 = Real(0)) {
    Node n;
    n.kind = kind;
    n.a = x;
    n.c0 = c0;
    n.c1 = c1;
    const MatX<Real>& v = value(x);
    switch (kind) {
      case OpKind::Neg: n.value = -v; break;
      case OpKind::Exp: n.value = v.array().exp(); break;
      case OpKind::Log: n.value = v.array().log(); break;
      case OpKind::Sin: n.value = v.array().sin(); break;
      case OpKind::Cos: n.value = v.array().cos(); break;
      case OpKind::Sigmoid:
        n.value = Real(1) / (Real(1) + (-v.array()).exp());
        break;
      case OpKind::Relu: n.value = v.array().max(Real(0)); break;
      case OpKind::Softplus: {
        // softplus_beta(x) = log(1 + exp(beta x)) / beta, computed stably.
        n.value = (v.array() * c0).unaryExpr([c0](Real z) {
          if (z > Real(30)) return z / c0;
          return std::log1p(std::exp(z)) / c0;
        });
        break;
      }
      case OpKind::Abs: n.value = v.array().abs(); break;
      case OpKind::Sqrt: n.value = v.array().sqrt(); break;
      case OpKind::Square: n.value = v.array().square(); break;
      case OpKind::ScaleShift: n.value = c0 * v.array() + c1; break;
      case OpKind::Clamp: n.value = v.array().max(c0).min(c1); break;
      default:
        throw NlosError(ErrorCode::UsageError, "bad unary op");
    }
    return push_node(std::move(n));
  }

  int binary(OpKind kind, int x, int y) {
    const MatX<Real>& a = value(x);
    const MatX<Real>& b = value(y);
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
      throw NlosError(ErrorCode::ShapeMismatch, "binary op shape mismatch");
    }
    Node n;
    n.kind = kind;
    n.a = x;
    n.b = y;
    switch (kind) {
      case OpKind::Add: n.value = a + b; break;
      case OpKind::Sub: n.value = a - b; break;
      case OpKind::Mul: n.value = a.array() * b.array(); break;
      case OpKind::Div: n.value = a.array() / b.array(); break;
      case OpKind::Max: n.value = a.array().max(b.array()); break;
      default:
        throw NlosError(ErrorCode::UsageError, "bad binary op");
    }
    return push_node(std::move(n));
  }

  int push(OpKind kind, MatX<Real> v, bool needs_grad) {
    Node n;
    n.kind = kind;
    n.value = std::move(v);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  int push_node(Node n) {
    n.needs_grad = (n.a >= 0 && nodes_[n.a].needs_grad) ||
                   (n.b >= 0 && nodes_[n.b].needs_grad) ||
                   (n.c >= 0 && nodes_[n.c].needs_grad);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  void guard_finite(int id, const char* what) {
    if (!nodes_[static_cast<size_t>(id)].value.allFinite()) {
      throw NlosError(ErrorCode::NumericError, std::string("non-finite result in ") + what);
    }
  }

  const ParamVector<Real>* params_;
  std::vector<Node> nodes_;
};

// Max relative error between reverse-mode and central finite differences,
// probed on a sampled subset of parameter coordinates.
template <class Real>
double grad_check(const std::function<Real(const ParamVector<Real>&)>& f,
                  ParamVector<Real>& params, const VecX<Real>& analytic_grad, Real h,
                  int n_probes, Rng& rng) {
  const std::int64_t n = params.size();
  if (n == 0) return 0.0;
  double worst = 0.0;
  for (int k = 0; k < n_probes; ++k) {
    std::int64_t i = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n)));
    Real saved = params.raw()[i];
    params.raw()[i] = saved + h;
    Real fp = f(params);
    params.raw()[i] = saved - h;
    Real fm = f(params);
    params.raw()[i] = saved;
    if (!std::isfinite(static_cast<double>(fp)) || !std::isfinite(static_cast<double>(fm))) {
      throw NlosError(ErrorCode::NumericError, "non-finite loss at finite-difference probe");
    }
    double fd = (static_cast<double>(fp) - static_cast<double>(fm)) / (2.0 * static_cast<double>(h));
    double ad = static_cast<double>(analytic_grad[i]);
    double rel = std::abs(ad - fd) / (std::abs(fd) + 1e-8);
    worst = std::max(worst, rel);
  }
  return worst;
}

using TapeF = Tape<float>;
using TapeD = Tape<double>;

}  // namespace nlos::ad
