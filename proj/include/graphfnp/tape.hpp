#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "graphfnp/errors.hpp"

namespace graphfnp {

// Reverse-mode tape over dense matrices. Every operation appends a node whose
// creation index is a topological position, so the backward sweep is a single
// reverse pass. Vectors are 1 x d rows; batched inputs stack examples as rows.
//
// The op set is exactly what the model needs; it is not a general autodiff.
template <typename S>
class Tape {
 public:
  using M = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

  struct Var {
    std::int32_t id = -1;
    bool valid() const { return id >= 0; }
  };

  // ---- construction of inputs ----

  Var constant(M v) { return push(Op::kConst, std::move(v)); }

  Var constant_scalar(S v) {
    M m(1, 1);
    m(0, 0) = v;
    return push(Op::kConst, std::move(m));
  }

  // Leaf with gradient tracking (parameters, or inputs under test).
  Var leaf(M v) { return push(Op::kLeaf, std::move(v)); }

  // ---- access ----

  const M& value(Var v) const { return nodes_[check(v)].value; }

  // Gradient after backward(); zeros if the node never received one.
  M grad(Var v) const {
    const Node& n = nodes_[check(v)];
    if (n.grad.size() == 0) return M::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  // ---- arithmetic ----

  Var add(Var a, Var b) {
    same_shape(a, b, "add");
    return push(Op::kAdd, value(a) + value(b), a, b);
  }

  Var sub(Var a, Var b) {
    same_shape(a, b, "sub");
    return push(Op::kSub, value(a) - value(b), a, b);
  }

  Var mul(Var a, Var b) {
    same_shape(a, b, "mul");
    return push(Op::kMul, value(a).cwiseProduct(value(b)), a, b);
  }

  Var matmul(Var a, Var b) {
    if (value(a).cols() != value(b).rows())
      throw ShapeError("matmul: inner dimensions disagree (" + dims(a) + " vs " + dims(b) + ")");
    return push(Op::kMatMul, value(a) * value(b), a, b);
  }

  Var neg(Var a) { return push(Op::kNeg, -value(a), a); }

  Var scale(Var a, S c) {
    Var v = push(Op::kScale, value(a) * c, a);
    nodes_.back().s0 = c;
    return v;
  }

  Var add_scalar(Var a, S c) {
    Var v = push(Op::kAddScalar, value(a).array() + c, a);
    return v;
  }

  // ---- elementwise nonlinearities ----

  Var relu(Var a) { return push(Op::kRelu, value(a).cwiseMax(S(0)), a); }

  Var exp(Var a) { return push(Op::kExp, value(a).array().exp(), a); }

  Var log(Var a) { return push(Op::kLog, value(a).array().log(), a); }

  Var sigmoid(Var a) {
    M out = (S(1) / (S(1) + (-value(a).array()).exp())).matrix();
    return push(Op::kSigmoid, std::move(out), a);
  }

  Var reciprocal(Var a) { return push(Op::kReciprocal, value(a).cwiseInverse(), a); }

  Var sqrt(Var a) { return push(Op::kSqrt, value(a).cwiseSqrt(), a); }

  Var clamp(Var a, S lo, S hi) {
    Var v = push(Op::kClamp, value(a).cwiseMax(lo).cwiseMin(hi), a);
    nodes_.back().s0 = lo;
    nodes_.back().s1 = hi;
    return v;
  }

  Var max_const(Var a, S c) {
    Var v = push(Op::kMaxConst, value(a).cwiseMax(c), a);
    nodes_.back().s0 = c;
    return v;
  }

  // ---- reductions and shaping ----

  Var sum(Var a) {
    M out(1, 1);
    out(0, 0) = value(a).sum();
    return push(Op::kSum, std::move(out), a);
  }

  Var mean_rows(Var a) {
    M out = value(a).colwise().mean();
    return push(Op::kMeanRows, std::move(out), a);
  }

  // a: n x m, b: 1 x m broadcast over rows.
  Var add_row_broadcast(Var a, Var b) {
    if (value(b).rows() != 1 || value(a).cols() != value(b).cols())
      throw ShapeError("add_row_broadcast: need (n x m) + (1 x m)");
    return push(Op::kAddRowBroadcast, value(a).rowwise() + value(b).row(0), a, b);
  }

  Var hcat(Var a, Var b) {
    if (value(a).rows() != value(b).rows())
      throw ShapeError("hcat: row counts disagree (" + dims(a) + " vs " + dims(b) + ")");
    M out(value(a).rows(), value(a).cols() + value(b).cols());
    out << value(a), value(b);
    return push(Op::kHCat, std::move(out), a, b);
  }

  Var hcat(std::initializer_list<Var> vars) {
    Var out{-1};
    for (Var v : vars) out = out.valid() ? hcat(out, v) : v;
    return out;
  }

  Var row(Var a, int i) {
    if (i < 0 || i >= value(a).rows()) throw ShapeError("row: index out of range");
    Var v = push(Op::kRow, value(a).row(i), a);
    nodes_.back().i0 = i;
    return v;
  }

  // value(k x d) = a(1 x d) repeated k times.
  Var replicate_row(Var a, int k) {
    if (value(a).rows() != 1) throw ShapeError("replicate_row: input must be a row");
    M out = value(a).replicate(k, 1);
    return push(Op::kReplicateRow, std::move(out), a);
  }

  Var gather_rows(Var a, std::vector<int> rows) {
    const M& src = value(a);
    M out(static_cast<Eigen::Index>(rows.size()), src.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      if (rows[k] < 0 || rows[k] >= src.rows()) throw ShapeError("gather_rows: index out of range");
      out.row(static_cast<Eigen::Index>(k)) = src.row(rows[k]);
    }
    Var v = push(Op::kGatherRows, std::move(out), a);
    nodes_.back().aux = store_ints(std::move(rows));
    return v;
  }

  // Frobenius norm as a 1x1; subgradient 0 at the origin.
  Var norm2(Var a) {
    M out(1, 1);
    out(0, 0) = value(a).norm();
    return push(Op::kNorm2, std::move(out), a);
  }

  // Euclidean norm of every row: (n x d) -> (n x 1).
  Var rowwise_norm(Var a) {
    M out = value(a).rowwise().norm();
    return push(Op::kRowNorm, std::move(out), a);
  }

  Var transpose(Var a) { return push(Op::kTranspose, value(a).transpose(), a); }

  // Multiply every entry of a by the 1x1 variable b.
  Var scale_by(Var a, Var b) {
    if (value(b).size() != 1) throw ShapeError("scale_by: scale must be 1x1");
    return push(Op::kScaleBy, value(a) * value(b)(0, 0), a, b);
  }

  // Forward takes the given hard values; backward passes gradients through to
  // the relaxed parent unchanged.
  Var straight_through(Var soft, M hard) {
    if (hard.rows() != value(soft).rows() || hard.cols() != value(soft).cols())
      throw ShapeError("straight_through: shape mismatch");
    return push(Op::kStraightThrough, std::move(hard), soft);
  }

  Var softmax_rows(Var a) {
    M out = value(a);
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      auto r = out.row(i);
      r = (r.array() - r.maxCoeff()).exp();
      r /= r.sum();
    }
    return push(Op::kSoftmaxRows, std::move(out), a);
  }

  // Sum over rows of (logsumexp(row) - row[target]); the building block for
  // every categorical likelihood in the model.
  Var cross_entropy_rows(Var logits, std::vector<int> targets) {
    const M& L = value(logits);
    if (static_cast<Eigen::Index>(targets.size()) != L.rows())
      throw ShapeError("cross_entropy_rows: one target per row required");
    S total = 0;
    for (Eigen::Index i = 0; i < L.rows(); ++i) {
      if (targets[i] < 0 || targets[i] >= L.cols())
        throw ShapeError("cross_entropy_rows: target out of range");
      const S m = L.row(i).maxCoeff();
      const S lse = m + std::log((L.row(i).array() - m).exp().sum());
      total += lse - L(i, targets[i]);
    }
    M out(1, 1);
    out(0, 0) = total;
    Var v = push(Op::kCrossEntropyRows, std::move(out), logits);
    nodes_.back().aux = store_ints(std::move(targets));
    return v;
  }

  // ---- backward ----

  void backward(Var loss) {
    Node& ln = nodes_[check(loss)];
    if (ln.value.size() != 1) throw ShapeError("backward: loss must be 1x1");
    ensure_grad(loss.id)(0, 0) = S(1);
    for (std::int32_t i = loss.id; i >= 0; --i) {
      if (nodes_[i].grad.size() == 0) continue;
      pull(i);
    }
  }

 private:
  enum class Op : std::uint8_t {
    kConst, kLeaf, kAdd, kSub, kMul, kMatMul, kNeg, kScale, kAddScalar,
    kRelu, kExp, kLog, kSigmoid, kReciprocal, kSqrt, kClamp, kMaxConst,
    kSum, kMeanRows, kAddRowBroadcast, kHCat, kRow, kReplicateRow,
    kGatherRows, kNorm2, kRowNorm, kTranspose, kScaleBy, kStraightThrough,
    kSoftmaxRows, kCrossEntropyRows,
  };

  struct Node {
    M value;
    M grad;
    Op op = Op::kConst;
    std::int32_t a = -1;
    std::int32_t b = -1;
    std::int32_t i0 = 0;
    std::int32_t aux = -1;
    S s0 = 0;
    S s1 = 0;
  };

  std::vector<Node> nodes_;
  std::vector<std::vector<int>> int_pool_;

  std::int32_t check(Var v) const {
    if (!v.valid() || v.id >= static_cast<std::int32_t>(nodes_.size()))
      throw ShapeError("tape: invalid variable handle");
    return v.id;
  }

  std::string dims(Var v) const {
    const M& m = value(v);
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
  }

  void same_shape(Var a, Var b, const char* what) const {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
      throw ShapeError(std::string(what) + ": shape mismatch (" + dims(a) + " vs " + dims(b) + ")");
  }

  Var push(Op op, M value, Var a = {}, Var b = {}) {
    Node n;
    n.value = std::move(value);
    n.op = op;
    n.a = a.id;
    n.b = b.id;
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
  }

  std::int32_t store_ints(std::vector<int> v) {
    int_pool_.push_back(std::move(v));
    return static_cast<std::int32_t>(int_pool_.size() - 1);
  }

  M& ensure_grad(std::int32_t id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = M::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void pull(std::int32_t id) {
    Node& n = nodes_[id];
    const M& g = n.grad;
    const auto A = [&]() -> const M& { return nodes_[n.a].value; };
    const auto B = [&]() -> const M& { return nodes_[n.b].value; };
    switch (n.op) {
      case Op::kConst:
      case Op::kLeaf:
        break;
      case Op::kAdd:
        ensure_grad(n.a) += g;
        ensure_grad(n.b) += g;
        break;
      case Op::kSub:
        ensure_grad(n.a) += g;
        ensure_grad(n.b) -= g;
        break;
      case Op::kMul:
        ensure_grad(n.a) += g.cwiseProduct(B());
        ensure_grad(n.b) += g.cwiseProduct(A());
        break;
      case Op::kMatMul:
        ensure_grad(n.a).noalias() += g * B().transpose();
        ensure_grad(n.b).noalias() += A().transpose() * g;
        break;
      case Op::kNeg:
        ensure_grad(n.a) -= g;
        break;
      case Op::kScale:
        ensure_grad(n.a) += g * n.s0;
        break;
      case Op::kAddScalar:
        ensure_grad(n.a) += g;
        break;
      case Op::kRelu:
        ensure_grad(n.a).array() += g.array() * (A().array() > S(0)).template cast<S>();
        break;
      case Op::kExp:
        ensure_grad(n.a).array() += g.array() * n.value.array();
        break;
      case Op::kLog:
        ensure_grad(n.a).array() += g.array() / A().array();
        break;
      case Op::kSigmoid:
        ensure_grad(n.a).array() +=
            g.array() * n.value.array() * (S(1) - n.value.array());
        break;
      case Op::kReciprocal:
        ensure_grad(n.a).array() -= g.array() * n.value.array() * n.value.array();
        break;
      case Op::kSqrt:
        ensure_grad(n.a).array() += g.array() * S(0.5) / n.value.array();
        break;
      case Op::kClamp:
        ensure_grad(n.a).array() +=
            g.array() * ((A().array() >= n.s0) && (A().array() <= n.s1)).template cast<S>();
        break;
      case Op::kMaxConst:
        ensure_grad(n.a).array() += g.array() * (A().array() > n.s0).template cast<S>();
        break;
      case Op::kSum:
        ensure_grad(n.a).array() += g(0, 0);
        break;
      case Op::kMeanRows:
        ensure_grad(n.a) += M::Ones(A().rows(), 1) * (g / S(A().rows()));
        break;
      case Op::kAddRowBroadcast:
        ensure_grad(n.a) += g;
        ensure_grad(n.b) += g.colwise().sum();
        break;
      case Op::kHCat:
        ensure_grad(n.a) += g.leftCols(A().cols());
        ensure_grad(n.b) += g.rightCols(B().cols());
        break;
      case Op::kRow:
        ensure_grad(n.a).row(n.i0) += g.row(0);
        break;
      case Op::kReplicateRow:
        ensure_grad(n.a) += g.colwise().sum();
        break;
      case Op::kGatherRows: {
        M& ga = ensure_grad(n.a);
        const auto& rows = int_pool_[n.aux];
        for (std::size_t k = 0; k < rows.size(); ++k)
          ga.row(rows[k]) += g.row(static_cast<Eigen::Index>(k));
        break;
      }
      case Op::kNorm2: {
        const S nv = n.value(0, 0);
        if (nv > S(0)) ensure_grad(n.a) += (g(0, 0) / nv) * A();
        break;
      }
      case Op::kRowNorm: {
        M& ga = ensure_grad(n.a);
        for (Eigen::Index i = 0; i < n.value.rows(); ++i) {
          const S nv = n.value(i, 0);
          if (nv > S(0)) ga.row(i) += (g(i, 0) / nv) * A().row(i);
        }
        break;
      }
      case Op::kTranspose:
        ensure_grad(n.a) += g.transpose();
        break;
      case Op::kScaleBy:
        ensure_grad(n.a) += g * B()(0, 0);
        ensure_grad(n.b)(0, 0) += g.cwiseProduct(A()).sum();
        break;
      case Op::kStraightThrough:
        ensure_grad(n.a) += g;
        break;
      case Op::kSoftmaxRows: {
        M& ga = ensure_grad(n.a);
        for (Eigen::Index i = 0; i < n.value.rows(); ++i) {
          const auto y = n.value.row(i).array();
          const auto gi = g.row(i).array();
          const S dot = (gi * y).sum();
          ga.row(i).array() += y * (gi - dot);
        }
        break;
      }
      case Op::kCrossEntropyRows: {
        M& ga = ensure_grad(n.a);
        const M& L = A();
        const auto& targets = int_pool_[n.aux];
        const S go = g(0, 0);
        for (Eigen::Index i = 0; i < L.rows(); ++i) {
          Eigen::Array<S, 1, Eigen::Dynamic> p = (L.row(i).array() - L.row(i).maxCoeff()).exp();
          p /= p.sum();
          ga.row(i).array() += go * p;
          ga(i, targets[i]) -= go;
        }
        break;
      }
    }
  }
};

}  // namespace graphfnp
