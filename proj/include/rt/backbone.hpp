#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rt/head.hpp"
#include "rt/tape.hpp"

namespace rt {

enum class PositionalMode { kLearnedAbsolute, kNone };
enum class ReadoutKind { kClassify, kRegress };

struct ModelConfig {
  std::size_t num_layers = 1;
  std::size_t d_model = 16;
  std::size_t num_heads = 2;
  std::size_t vocab_size = 2;
  std::size_t d_rat = 0;  // 0 = no rational head
  std::optional<HeadConfig> head;
  PositionalMode positional = PositionalMode::kNone;
  ReadoutKind readout = ReadoutKind::kClassify;
  std::size_t num_classes = 2;
  std::size_t max_positions = 512;
  std::vector<double> alpha;     // initial head state; empty = e_1
  double head_init_eps = 0.01;
  double head_init_nu = 0.01;

  void validate() const {
    if (num_layers == 0 || d_model == 0 || vocab_size == 0)
      throw ConfigError("model: zero-sized config");
    if (d_model % num_heads != 0) throw ConfigError("model: d_model % num_heads != 0");
    if (head.has_value() != (d_rat > 0)) throw ConfigError("model: d_rat/head mismatch");
    if (head && head->total_dim() != d_rat) throw ConfigError("model: d_rat != head dim");
    if (readout == ReadoutKind::kClassify && num_classes < 2)
      throw ConfigError("model: classify needs >= 2 classes");
    if (positional == PositionalMode::kLearnedAbsolute && max_positions == 0)
      throw ConfigError("model: max_positions required for learned positions");
  }
};

/// Transformer weights plus (optionally) a rational head. Backbone tensors
/// live in `params`; head tensors live inside the head and are exposed with a
/// "head." prefix by named_tensors().
class Model {
 public:
  explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    if (cfg_.head) head_.emplace(*cfg_.head);
    allocate();
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  bool has_head() const { return head_.has_value(); }
  TransitionHead& head() { return *head_; }
  const TransitionHead& head() const { return *head_; }

  Vector alpha() const {
    if (!head_) throw ConfigError("model: no head");
    if (cfg_.alpha.empty()) return Vector::basis(cfg_.d_rat, 0);
    if (cfg_.alpha.size() != cfg_.d_rat) throw ConfigError("model: alpha dim");
    Vector a(cfg_.d_rat);
    for (std::size_t i = 0; i < cfg_.d_rat; ++i) a[i] = cfg_.alpha[i];
    return a;
  }

  void init(std::uint64_t seed) {
    Rng rng(seed);
    for (auto& [name, value] : params_) {
      if (name.size() >= 2 && name.compare(name.size() - 2, 2, "_g") == 0) {
        for (double& v : value.data()) v = 1.0;  // layer-norm gains
      } else if (name.find("_b") != std::string::npos) {
        for (double& v : value.data()) v = 0.0;  // every bias
      } else {
        for (double& v : value.data()) v = gaussian(rng, 0.0, 0.02);
      }
    }
    if (head_) head_->init_near_identity(cfg_.head_init_eps, cfg_.head_init_nu, seed + 1);
  }

  /// Every trainable tensor by name; head tensors carry a "head." prefix.
  std::vector<std::pair<std::string, Matrix*>> named_tensors() {
    std::vector<std::pair<std::string, Matrix*>> out;
    for (auto& [name, value] : params_) out.emplace_back(name, &value);
    if (head_)
      for (auto& [name, value] : head_->params())
        out.emplace_back("head." + name, &value);
    return out;
  }

 private:
  void allocate() {
    const std::size_t d = cfg_.d_model;
    params_["embed"] = Matrix(cfg_.vocab_size, d);
    if (cfg_.positional == PositionalMode::kLearnedAbsolute)
      params_["pos"] = Matrix(cfg_.max_positions, d);
    for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
      const std::string p = "l" + std::to_string(l) + ".";
      params_[p + "wq"] = Matrix(d, d);
      params_[p + "wk"] = Matrix(d, d);
      params_[p + "wv"] = Matrix(d, d);
      params_[p + "wo"] = Matrix(d, d);
      params_[p + "ffn_w1"] = Matrix(4 * d, d);
      params_[p + "ffn_b1"] = Matrix(1, 4 * d);
      params_[p + "ffn_w2"] = Matrix(d, 4 * d);
      params_[p + "ffn_b2"] = Matrix(1, d);
      params_[p + "ln1_g"] = Matrix(1, d);
      params_[p + "ln1_b"] = Matrix(1, d);
      params_[p + "ln2_g"] = Matrix(1, d);
      params_[p + "ln2_b"] = Matrix(1, d);
      if (head_) params_[p + "wproj"] = Matrix(d, cfg_.d_rat);
    }
    const std::size_t out_dim =
        cfg_.readout == ReadoutKind::kClassify ? cfg_.num_classes : 1;
    params_["out_w"] = Matrix(out_dim, d);
    params_["out_b"] = Matrix(1, out_dim);
  }

  ModelConfig cfg_;
  ParamStore params_;
  std::optional<TransitionHead> head_;
};

/// z~_t = z_t + W_proj h_t (h as rows, positions 1..T; h_0 already dropped).
inline NodeId inject(Tape& tape, NodeId z, NodeId h, NodeId w_proj) {
  if (tape.value(h).rows() != tape.value(z).rows())
    throw ShapeError("inject: position count mismatch");
  return tape.add(z, tape.matmul(h, tape.transpose(w_proj)));
}

namespace detail {

struct LayerNodes {
  NodeId wq, wk, wv, wo;
  NodeId ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  NodeId ln1_g, ln1_b, ln2_g, ln2_b;
};

inline LayerNodes leaf_layer(Tape& tape, const ParamStore& params, const std::string& p) {
  auto lf = [&](const char* n) { return tape.leaf(params.at(p + n), p + n); };
  return {lf("wq"),     lf("wk"),     lf("wv"),     lf("wo"),
          lf("ffn_w1"), lf("ffn_b1"), lf("ffn_w2"), lf("ffn_b2"),
          lf("ln1_g"),  lf("ln1_b"),  lf("ln2_g"),  lf("ln2_b")};
}

}  // namespace detail

/// Pre-norm block: x + Attn(LN(x)) + FFN(LN(x)), multi-head causal attention
/// with 1/sqrt(d_head) scaling and a ReLU FFN of width 4*d_model.
inline NodeId transformer_layer(Tape& tape, NodeId z, const detail::LayerNodes& w,
                                std::size_t num_heads, bool causal) {
  const std::size_t d = tape.value(z).cols();
  const std::size_t dh = d / num_heads;
  NodeId x1 = tape.layernorm(z, w.ln1_g, w.ln1_b);
  NodeId q = tape.matmul(x1, tape.transpose(w.wq));
  NodeId k = tape.matmul(x1, tape.transpose(w.wk));
  NodeId v = tape.matmul(x1, tape.transpose(w.wv));
  std::vector<NodeId> ctx;
  for (std::size_t h = 0; h < num_heads; ++h) {
    const std::size_t t = tape.value(z).rows();
    NodeId qh = tape.slice(q, 0, t, h * dh, dh);
    NodeId kh = tape.slice(k, 0, t, h * dh, dh);
    NodeId vh = tape.slice(v, 0, t, h * dh, dh);
    NodeId scores =
        tape.scale(tape.matmul(qh, tape.transpose(kh)), 1.0 / std::sqrt(double(dh)));
    ctx.push_back(tape.matmul(tape.softmax_rows(scores, causal), vh));
  }
  NodeId attn = tape.matmul(tape.concat_cols(ctx), tape.transpose(w.wo));
  NodeId z1 = tape.add(z, attn);
  NodeId x2 = tape.layernorm(z1, w.ln2_g, w.ln2_b);
  NodeId hidden = tape.relu(
      tape.add_row_broadcast(tape.matmul(x2, tape.transpose(w.ffn_w1)), w.ffn_b1));
  NodeId ffn =
      tape.add_row_broadcast(tape.matmul(hidden, tape.transpose(w.ffn_w2)), w.ffn_b2);
  return tape.add(z1, ffn);
}

struct ForwardNodes {
  NodeId output = -1;  // T x num_classes (classify) or T x 1 (regress)
  NodeId h_leaf = -1;  // named "@h" constant carrying the head states, or -1
  Trajectory traj;     // head trajectory h_0..h_T (empty without a head)
  bool clamped_positions = false;  // evaluation ran past the position table
};

/// Full forward pass on the tape. The rational trajectory is computed once by
/// the scan and injected at every layer through that layer's projection; the
/// trajectory enters the tape as a named constant so backward() reports the
/// summed per-position upstream gradient under "@h".
inline ForwardNodes model_forward(const Model& m, const std::vector<int>& tokens,
                                  Tape& tape) {
  const ModelConfig& cfg = m.config();
  const std::size_t t = tokens.size();
  if (t == 0) throw InputError("model_forward: empty sequence");
  ForwardNodes out;
  NodeId z = tape.embed(tape.leaf(m.params().at("embed"), "embed"), tokens);
  if (cfg.positional == PositionalMode::kLearnedAbsolute) {
    std::vector<int> pos(t);
    for (std::size_t i = 0; i < t; ++i) {
      // Past the learned table, reuse the final position vector (keeps the
      // baseline runnable beyond its training horizon; callers flag this).
      if (i >= cfg.max_positions) {
        pos[i] = static_cast<int>(cfg.max_positions) - 1;
        out.clamped_positions = true;
      } else {
        pos[i] = static_cast<int>(i);
      }
    }
    z = tape.add(z, tape.embed(tape.leaf(m.params().at("pos"), "pos"), pos));
  }
  if (m.has_head()) {
    out.traj = m.head().forward(tokens, m.alpha());
    Matrix hmat(t, cfg.d_rat);
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < cfg.d_rat; ++j) hmat(i, j) = out.traj.states[i + 1][j];
    out.h_leaf = tape.leaf(std::move(hmat), "@h");
  }
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const std::string p = "l" + std::to_string(l) + ".";
    if (m.has_head())
      z = inject(tape, z, out.h_leaf,
                 tape.leaf(m.params().at(p + "wproj"), p + "wproj"));
    z = transformer_layer(tape, z, detail::leaf_layer(tape, m.params(), p),
                          cfg.num_heads, /*causal=*/true);
  }
  out.output = tape.add_row_broadcast(
      tape.matmul(z, tape.transpose(tape.leaf(m.params().at("out_w"), "out_w"))),
      tape.leaf(m.params().at("out_b"), "out_b"));
  return out;
}

/// Evaluation-only forward: same kernels in the same order as the training
/// path, so the outputs match it bit for bit (the throwaway tape is local).
inline Matrix model_forward_nograd(const Model& m, const std::vector<int>& tokens,
                                   bool* clamped = nullptr) {
  Tape tape;
  ForwardNodes fwd = model_forward(m, tokens, tape);
  if (clamped) *clamped = fwd.clamped_positions;
  return tape.value(fwd.output);
}

/// Backward through backbone and head: tape gradients first, then the "@h"
/// upstream re-enters the head's adjoint scan; head gradients come back under
/// the "head." prefix.
inline GradStore model_backward(const Model& m, const std::vector<int>& tokens,
                                const ForwardNodes& fwd, NodeId loss, Tape& tape) {
  GradStore grads = tape.backward(loss);
  auto it = grads.find("@h");
  if (it != grads.end()) {
    const Matrix& gh = it->second;
    AdjointSequence up;
    up.deltas.reserve(tokens.size());
    for (std::size_t i = 0; i < gh.rows(); ++i) {
      Vector v(gh.cols());
      for (std::size_t j = 0; j < gh.cols(); ++j) v[j] = gh(i, j);
      up.deltas.push_back(std::move(v));
    }
    GradStore hg = m.head().backward(tokens, fwd.traj, up);
    for (auto& [name, g] : hg) grad_accumulate(grads, "head." + name, g);
    grads.erase("@h");
  }
  return grads;
}

/// Training losses. Classification supervises every position; regression
/// reads the final-position scalar.
inline NodeId classify_loss(Tape& tape, NodeId logits, const std::vector<int>& labels) {
  return tape.cross_entropy(logits, labels);
}

inline NodeId regress_loss(Tape& tape, NodeId outputs, double target) {
  const std::size_t t = tape.value(outputs).rows();
  return tape.mse(tape.slice(outputs, t - 1, 1, 0, 1), Matrix(1, 1, target));
}

}  // namespace rt
