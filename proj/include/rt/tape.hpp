#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "rt/kernels.hpp"
#include "rt/matrix.hpp"

namespace rt {

/// Gradient tensors keyed by parameter name. Shapes always match the
/// parameter they belong to.
using GradStore = std::map<std::string, Matrix>;

/// Named parameter tensors; std::map keeps iteration order deterministic.
using ParamStore = std::map<std::string, Matrix>;

inline void grad_accumulate(GradStore& store, const std::string& name, const Matrix& g) {
  auto it = store.find(name);
  if (it == store.end())
    store.emplace(name, g);
  else
    it->second += g;
}

using NodeId = int;

/// Append-only reverse-mode tape over a fixed operation vocabulary. Forward
/// values are computed eagerly at record time; backward() replays the tape in
/// reverse, visiting each node once.
class Tape {
 public:
  enum class Op {
    kLeaf,
    kAdd,
    kAddRowBroadcast,
    kScale,
    kScalarMul,
    kMatmul,
    kTranspose,
    kRelu,
    kSigmoid,
    kSoftmaxRows,
    kSoftmaxCols,
    kLayerNorm,
    kEmbed,
    kConcatCols,
    kSlice,
    kDiag,
    kSumAll,
    kCrossEntropy,
    kMse,
    kSolve,
  };

  struct Node {
    Op op;
    std::vector<NodeId> inputs;
    Matrix value;
    std::string name;       // leaf parameter name ("" = constant)
    double scalar = 0.0;    // kScale factor
    std::vector<int> ids;   // kEmbed token ids / kCrossEntropy labels
    std::size_t r0 = 0, nr = 0, c0 = 0, nc = 0;  // kSlice window
    bool causal = false;    // kSoftmaxRows mask
    Matrix aux;             // cached forward extras (xhat, softmax, target)
  };

  std::size_t size() const { return nodes_.size(); }
  const Matrix& value(NodeId id) const { return nodes_[id].value; }

  /// Leaf with an empty name is a constant: no gradient is recorded for it.
  NodeId leaf(Matrix v, std::string name = "") {
    Node n;
    n.op = Op::kLeaf;
    n.value = std::move(v);
    n.name = std::move(name);
    return push(std::move(n));
  }

  NodeId constant(Matrix v) { return leaf(std::move(v)); }

  NodeId add(NodeId a, NodeId b) {
    if (!nodes_[a].value.same_shape(nodes_[b].value)) throw ShapeError("tape add: shape");
    return push({Op::kAdd, {a, b}, nodes_[a].value + nodes_[b].value});
  }

  /// x (T x d) plus a broadcast row vector b (1 x d).
  NodeId add_row_broadcast(NodeId x, NodeId b) {
    const Matrix& xv = nodes_[x].value;
    const Matrix& bv = nodes_[b].value;
    if (bv.rows() != 1 || bv.cols() != xv.cols()) throw ShapeError("tape add_row: shape");
    Matrix y = xv;
    for (std::size_t i = 0; i < y.rows(); ++i)
      for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += bv(0, j);
    return push({Op::kAddRowBroadcast, {x, b}, std::move(y)});
  }

  NodeId scale(NodeId a, double s) {
    Node n{Op::kScale, {a}, nodes_[a].value * s};
    n.scalar = s;
    return push(std::move(n));
  }

  NodeId sub(NodeId a, NodeId b) { return add(a, scale(b, -1.0)); }

  /// s must be 1 x 1; broadcast-multiplies m.
  NodeId scalar_mul(NodeId s, NodeId m) {
    if (nodes_[s].value.rows() != 1 || nodes_[s].value.cols() != 1)
      throw ShapeError("tape scalar_mul: scalar must be 1x1");
    return push({Op::kScalarMul, {s, m}, nodes_[m].value * nodes_[s].value(0, 0)});
  }

  NodeId matmul(NodeId a, NodeId b) {
    return push({Op::kMatmul, {a, b}, rt::matmul(nodes_[a].value, nodes_[b].value)});
  }

  NodeId transpose(NodeId a) {
    return push({Op::kTranspose, {a}, rt::transpose(nodes_[a].value)});
  }

  NodeId relu(NodeId a) { return push({Op::kRelu, {a}, rt::relu(nodes_[a].value)}); }

  NodeId sigmoid(NodeId a) { return push({Op::kSigmoid, {a}, rt::sigmoid(nodes_[a].value)}); }

  NodeId softmax_rows(NodeId a, bool causal = false) {
    Node n{Op::kSoftmaxRows, {a}, rt::softmax_rows(nodes_[a].value, causal)};
    n.causal = causal;
    return push(std::move(n));
  }

  NodeId softmax_cols(NodeId a) {
    return push({Op::kSoftmaxCols, {a}, rt::softmax_cols(nodes_[a].value)});
  }

  NodeId layernorm(NodeId x, NodeId gain, NodeId bias) {
    Node n;
    n.op = Op::kLayerNorm;
    n.inputs = {x, gain, bias};
    n.value = rt::layernorm_rows(nodes_[x].value, nodes_[gain].value, nodes_[bias].value,
                                 &n.aux);
    return push(std::move(n));
  }

  /// Rows of the table selected by token id: output is ids.size() x cols.
  NodeId embed(NodeId table, std::vector<int> ids) {
    const Matrix& t = nodes_[table].value;
    Matrix y(ids.size(), t.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= t.rows())
        throw InputError("tape embed: id out of range");
      for (std::size_t j = 0; j < t.cols(); ++j) y(i, j) = t(ids[i], j);
    }
    Node n{Op::kEmbed, {table}, std::move(y)};
    n.ids = std::move(ids);
    return push(std::move(n));
  }

  NodeId concat_cols(const std::vector<NodeId>& parts) {
    if (parts.empty()) throw ShapeError("tape concat_cols: empty");
    const std::size_t rows = nodes_[parts[0]].value.rows();
    std::size_t cols = 0;
    for (NodeId p : parts) {
      if (nodes_[p].value.rows() != rows) throw ShapeError("tape concat_cols: rows");
      cols += nodes_[p].value.cols();
    }
    Matrix y(rows, cols);
    std::size_t at = 0;
    for (NodeId p : parts) {
      const Matrix& v = nodes_[p].value;
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < v.cols(); ++j) y(i, at + j) = v(i, j);
      at += v.cols();
    }
    return push({Op::kConcatCols, parts, std::move(y)});
  }

  NodeId slice(NodeId a, std::size_t r0, std::size_t nr, std::size_t c0, std::size_t nc) {
    const Matrix& v = nodes_[a].value;
    if (r0 + nr > v.rows() || c0 + nc > v.cols()) throw ShapeError("tape slice: window");
    Matrix y(nr, nc);
    for (std::size_t i = 0; i < nr; ++i)
      for (std::size_t j = 0; j < nc; ++j) y(i, j) = v(r0 + i, c0 + j);
    Node n{Op::kSlice, {a}, std::move(y)};
    n.r0 = r0;
    n.nr = nr;
    n.c0 = c0;
    n.nc = nc;
    return push(std::move(n));
  }

  /// Column vector (d x 1) to diagonal matrix (d x d).
  NodeId diag(NodeId v) {
    const Matrix& x = nodes_[v].value;
    if (x.cols() != 1) throw ShapeError("tape diag: expects d x 1");
    Matrix y(x.rows(), x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) y(i, i) = x(i, 0);
    return push({Op::kDiag, {v}, std::move(y)});
  }

  NodeId sum_all(NodeId a) {
    double s = 0.0;
    for (double v : nodes_[a].value.data()) s += v;
    return push({Op::kSumAll, {a}, Matrix(1, 1, s)});
  }

  /// Mean negative log-likelihood of per-row labels under row softmax.
  NodeId cross_entropy(NodeId logits, std::vector<int> labels) {
    const Matrix& z = nodes_[logits].value;
    if (labels.size() != z.rows()) throw ShapeError("tape cross_entropy: label count");
    Matrix probs = rt::softmax_rows(z);
    double nll = 0.0;
    for (std::size_t i = 0; i < z.rows(); ++i) {
      if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= z.cols())
        throw InputError("tape cross_entropy: label out of range");
      nll -= std::log(std::max(probs(i, labels[i]), 1e-300));
    }
    nll /= static_cast<double>(z.rows());
    Node n{Op::kCrossEntropy, {logits}, Matrix(1, 1, nll)};
    n.ids = std::move(labels);
    n.aux = std::move(probs);
    return push(std::move(n));
  }

  /// Mean squared error against a constant target of the same shape.
  NodeId mse(NodeId pred, Matrix target) {
    const Matrix& p = nodes_[pred].value;
    if (!p.same_shape(target)) throw ShapeError("tape mse: shape");
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double d = p.data()[i] - target.data()[i];
      s += d * d;
    }
    s /= static_cast<double>(p.size());
    Node n{Op::kMse, {pred}, Matrix(1, 1, s)};
    n.aux = std::move(target);
    return push(std::move(n));
  }

  /// X = A^{-1} B via solve_small; backward uses
  /// grad_B = A^{-T} grad_X, grad_A = -grad_B X^T.
  NodeId solve(NodeId a, NodeId b) {
    if (!is_finite(nodes_[a].value)) throw NumericError("tape solve: NaN in A");
    return push({Op::kSolve, {a, b}, solve_small(nodes_[a].value, nodes_[b].value)});
  }

  /// Reverse sweep from a scalar loss node. Seeds the loss with 1 and
  /// accumulates parameter gradients by leaf name.
  GradStore backward(NodeId loss) const {
    const Matrix& v = nodes_[loss].value;
    if (v.rows() != 1 || v.cols() != 1) throw ShapeError("backward: loss must be scalar");
    return backward_from({{loss, Matrix(1, 1, 1.0)}});
  }

  /// Reverse sweep seeded with explicit upstream gradients on arbitrary
  /// nodes (used to re-enter the tape from the adjoint scan).
  GradStore backward_from(const std::vector<std::pair<NodeId, Matrix>>& seeds) const {
    std::vector<Matrix> grads(nodes_.size());
    std::vector<bool> has(nodes_.size(), false);
    auto seed_into = [&](NodeId id, const Matrix& g) {
      if (!nodes_[id].value.same_shape(g)) throw ShapeError("backward: seed shape");
      if (has[id])
        grads[id] += g;
      else {
        grads[id] = g;
        has[id] = true;
      }
    };
    for (const auto& [id, g] : seeds) seed_into(id, g);
    GradStore store;
    for (NodeId id = static_cast<NodeId>(nodes_.size()) - 1; id >= 0; --id) {
      if (!has[id]) continue;
      if (!is_finite(grads[id]))
        throw NumericError("backward: NaN gradient at node " + std::to_string(id));
      propagate(id, grads[id], grads, has, store);
    }
    return store;
  }

 private:
  NodeId push(Node n) {
    if (!is_finite(n.value))
      throw NumericError("tape: non-finite forward value at node " +
                         std::to_string(nodes_.size()));
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size()) - 1;
  }

  void propagate(NodeId id, const Matrix& g, std::vector<Matrix>& grads,
                 std::vector<bool>& has, GradStore& store) const {
    const Node& n = nodes_[id];
    auto send = [&](NodeId to, Matrix gi) {
      if (has[to])
        grads[to] += gi;
      else {
        grads[to] = std::move(gi);
        has[to] = true;
      }
    };
    switch (n.op) {
      case Op::kLeaf:
        if (!n.name.empty()) grad_accumulate(store, n.name, g);
        break;
      case Op::kAdd:
        send(n.inputs[0], g);
        send(n.inputs[1], g);
        break;
      case Op::kAddRowBroadcast: {
        send(n.inputs[0], g);
        Matrix gb(1, g.cols());
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < g.cols(); ++j) gb(0, j) += g(i, j);
        send(n.inputs[1], std::move(gb));
        break;
      }
      case Op::kScale:
        send(n.inputs[0], g * n.scalar);
        break;
      case Op::kScalarMul: {
        const Matrix& m = nodes_[n.inputs[1]].value;
        double gs = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) gs += g.data()[i] * m.data()[i];
        send(n.inputs[0], Matrix(1, 1, gs));
        send(n.inputs[1], g * nodes_[n.inputs[0]].value(0, 0));
        break;
      }
      case Op::kMatmul:
        send(n.inputs[0], rt::matmul(g, rt::transpose(nodes_[n.inputs[1]].value)));
        send(n.inputs[1], rt::matmul(rt::transpose(nodes_[n.inputs[0]].value), g));
        break;
      case Op::kTranspose:
        send(n.inputs[0], rt::transpose(g));
        break;
      case Op::kRelu: {
        const Matrix& x = nodes_[n.inputs[0]].value;
        Matrix gx = g;
        for (std::size_t i = 0; i < gx.size(); ++i)
          if (x.data()[i] <= 0.0) gx.data()[i] = 0.0;
        send(n.inputs[0], std::move(gx));
        break;
      }
      case Op::kSigmoid: {
        const Matrix& y = n.value;
        Matrix gx = g;
        for (std::size_t i = 0; i < gx.size(); ++i)
          gx.data()[i] *= y.data()[i] * (1.0 - y.data()[i]);
        send(n.inputs[0], std::move(gx));
        break;
      }
      case Op::kSoftmaxRows: {
        const Matrix& y = n.value;
        Matrix gx(g.rows(), g.cols());
        for (std::size_t i = 0; i < g.rows(); ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < g.cols(); ++j) dot += g(i, j) * y(i, j);
          for (std::size_t j = 0; j < g.cols(); ++j)
            gx(i, j) = y(i, j) * (g(i, j) - dot);
        }
        send(n.inputs[0], std::move(gx));
        break;
      }
      case Op::kSoftmaxCols: {
        const Matrix& y = n.value;
        Matrix gx(g.rows(), g.cols());
        for (std::size_t j = 0; j < g.cols(); ++j) {
          double dot = 0.0;
          for (std::size_t i = 0; i < g.rows(); ++i) dot += g(i, j) * y(i, j);
          for (std::size_t i = 0; i < g.rows(); ++i)
            gx(i, j) = y(i, j) * (g(i, j) - dot);
        }
        send(n.inputs[0], std::move(gx));
        break;
      }
      case Op::kLayerNorm: {
        const Matrix& x = nodes_[n.inputs[0]].value;
        const Matrix& gain = nodes_[n.inputs[1]].value;
        const Matrix& xhat = n.aux;
        const std::size_t d = x.cols();
        const double inv_d = 1.0 / static_cast<double>(d);
        Matrix gx(x.rows(), d);
        Matrix ggain(1, d);
        Matrix gbias(1, d);
        for (std::size_t i = 0; i < x.rows(); ++i) {
          double mean = 0.0;
          for (std::size_t j = 0; j < d; ++j) mean += x(i, j);
          mean *= inv_d;
          double var = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double c = x(i, j) - mean;
            var += c * c;
          }
          var *= inv_d;
          const double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
          double ghat_mean = 0.0, ghat_xhat_mean = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double ghat = g(i, j) * gain(0, j);
            ghat_mean += ghat;
            ghat_xhat_mean += ghat * xhat(i, j);
            ggain(0, j) += g(i, j) * xhat(i, j);
            gbias(0, j) += g(i, j);
          }
          ghat_mean *= inv_d;
          ghat_xhat_mean *= inv_d;
          for (std::size_t j = 0; j < d; ++j) {
            const double ghat = g(i, j) * gain(0, j);
            gx(i, j) = inv_std * (ghat - ghat_mean - xhat(i, j) * ghat_xhat_mean);
          }
        }
        send(n.inputs[0], std::move(gx));
        send(n.inputs[1], std::move(ggain));
        send(n.inputs[2], std::move(gbias));
        break;
      }
      case Op::kEmbed: {
        const Matrix& t = nodes_[n.inputs[0]].value;
        Matrix gt(t.rows(), t.cols());
        for (std::size_t i = 0; i < n.ids.size(); ++i)
          for (std::size_t j = 0; j < t.cols(); ++j) gt(n.ids[i], j) += g(i, j);
        send(n.inputs[0], std::move(gt));
        break;
      }
      case Op::kConcatCols: {
        std::size_t at = 0;
        for (NodeId p : n.inputs) {
          const Matrix& v = nodes_[p].value;
          Matrix gp(v.rows(), v.cols());
          for (std::size_t i = 0; i < v.rows(); ++i)
            for (std::size_t j = 0; j < v.cols(); ++j) gp(i, j) = g(i, at + j);
          at += v.cols();
          send(p, std::move(gp));
        }
        break;
      }
      case Op::kSlice: {
        const Matrix& v = nodes_[n.inputs[0]].value;
        Matrix gv(v.rows(), v.cols());
        for (std::size_t i = 0; i < n.nr; ++i)
          for (std::size_t j = 0; j < n.nc; ++j) gv(n.r0 + i, n.c0 + j) = g(i, j);
        send(n.inputs[0], std::move(gv));
        break;
      }
      case Op::kDiag: {
        const Matrix& v = nodes_[n.inputs[0]].value;
        Matrix gv(v.rows(), 1);
        for (std::size_t i = 0; i < v.rows(); ++i) gv(i, 0) = g(i, i);
        send(n.inputs[0], std::move(gv));
        break;
      }
      case Op::kSumAll: {
        send(n.inputs[0], Matrix(nodes_[n.inputs[0]].value.rows(),
                                 nodes_[n.inputs[0]].value.cols(), g(0, 0)));
        break;
      }
      case Op::kCrossEntropy: {
        const Matrix& probs = n.aux;
        Matrix gz = probs * (g(0, 0) / static_cast<double>(probs.rows()));
        for (std::size_t i = 0; i < probs.rows(); ++i)
          gz(i, n.ids[i]) -= g(0, 0) / static_cast<double>(probs.rows());
        send(n.inputs[0], std::move(gz));
        break;
      }
      case Op::kMse: {
        const Matrix& p = nodes_[n.inputs[0]].value;
        Matrix gp = p;
        const double f = 2.0 * g(0, 0) / static_cast<double>(p.size());
        for (std::size_t i = 0; i < gp.size(); ++i)
          gp.data()[i] = f * (p.data()[i] - n.aux.data()[i]);
        send(n.inputs[0], std::move(gp));
        break;
      }
      case Op::kSolve: {
        const Matrix& a = nodes_[n.inputs[0]].value;
        Matrix gb = solve_small(rt::transpose(a), g);
        Matrix ga = rt::matmul(gb, rt::transpose(n.value)) * -1.0;
        send(n.inputs[0], std::move(ga));
        send(n.inputs[1], std::move(gb));
        break;
      }
    }
  }

  std::vector<Node> nodes_;
};

/// Builds the tape with `build`, then compares tape gradients against central
/// finite differences over every parameter entry; returns the max relative
/// error (denominator max(1, |g|, |g_fd|)).
inline double grad_check(const std::function<NodeId(Tape&, const ParamStore&)>& build,
                         ParamStore params, double eps) {
  if (eps < 1e-7 || eps > 1e-3) throw InputError("grad_check: eps out of range");
  Tape tape;
  NodeId loss = build(tape, params);
  GradStore grads = tape.backward(loss);
  double worst = 0.0;
  for (auto& [name, value] : params) {
    const Matrix* g = nullptr;
    auto it = grads.find(name);
    if (it != grads.end()) g = &it->second;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value.data()[i];
      value.data()[i] = saved + eps;
      Tape tp;
      const double lp = tp.value(build(tp, params))(0, 0);
      value.data()[i] = saved - eps;
      Tape tm;
      const double lm = tm.value(build(tm, params))(0, 0);
      value.data()[i] = saved;
      const double fd = (lp - lm) / (2.0 * eps);
      const double an = g ? g->data()[i] : 0.0;
      const double rel = std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace rt
