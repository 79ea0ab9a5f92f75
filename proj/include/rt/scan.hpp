#pragma once

#include <cstddef>
#include <vector>

#include "rt/wfa.hpp"

namespace rt {

/// Per-step operator stream for one sequence: h_t = ops[t-1] h_{t-1}
/// (+ biases[t-1] in the affine case).
struct OperatorSequence {
  std::vector<Matrix> ops;
  std::vector<Vector> biases;  // empty for the purely linear case

  std::size_t length() const { return ops.size(); }
  bool affine() const { return !biases.empty(); }

  void validate() const {
    if (ops.empty()) return;
    const std::size_t d = ops.front().rows();
    for (const Matrix& m : ops)
      if (m.rows() != d || m.cols() != d) throw ShapeError("OperatorSequence: op shape");
    if (!biases.empty()) {
      if (biases.size() != ops.size()) throw ShapeError("OperatorSequence: bias count");
      for (const Vector& b : biases)
        if (b.dim() != d) throw ShapeError("OperatorSequence: bias dim");
    }
  }
};

/// Per-position loss gradients w.r.t. the states (the injections v_t).
struct AdjointSequence {
  std::vector<Vector> deltas;
};

struct ScanStats {
  std::size_t levels = 0;
  std::size_t combines = 0;
};

/// Number of parallel levels a Kogge-Stone scan of length T executes.
inline std::size_t scan_depth(std::size_t t) {
  if (t < 1) throw InputError("scan_depth: T must be >= 1");
  std::size_t levels = 0;
  std::size_t span = 1;
  while (span < t) {
    span <<= 1;
    ++levels;
  }
  return levels;
}

namespace detail {

constexpr double kOverflowLimit = 1e300;
// Below this length the scan overhead dominates and a sequential loop wins.
constexpr std::size_t kSequentialCutoff = 32;

inline void check_overflow(const Matrix& m) {
  for (double v : m.data())
    if (!(v > -kOverflowLimit && v < kOverflowLimit))
      throw NumericError("scan: operator entry overflow");
}

/// Inclusive Kogge-Stone scan in place: out[i] <- combine of in[i..0] when
/// suffix=false, in[i..T-1] when suffix=true. Prefix composition puts the
/// later operator on the left of the product, suffix composition the earlier.
inline void kogge_stone(std::vector<Matrix>& v, bool suffix, ScanStats* stats) {
  const std::size_t t = v.size();
  std::size_t levels = 0, combines = 0;
  std::vector<Matrix> next(t);
  for (std::size_t offset = 1; offset < t; offset <<= 1) {
    for (std::size_t i = 0; i < t; ++i) {
      if (!suffix && i >= offset)
        next[i] = matmul(v[i], v[i - offset]);
      else if (suffix && i + offset < t)
        next[i] = matmul(v[i], v[i + offset]);
      else
        next[i] = v[i];
      if ((!suffix && i >= offset) || (suffix && i + offset < t)) ++combines;
    }
    v.swap(next);
    ++levels;
    for (const Matrix& m : v) check_overflow(m);
  }
  if (stats) {
    stats->levels = levels;
    stats->combines = combines;
  }
}

inline Matrix lift_affine(const Matrix& m, const Vector& b) {
  const std::size_t d = m.rows();
  Matrix l(d + 1, d + 1);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) l(i, j) = m(i, j);
    l(i, d) = b[i];
  }
  l(d, d) = 1.0;
  return l;
}

}  // namespace detail

/// All prefix states h_1..h_T via an inclusive parallel scan over the matrix
/// monoid; affine streams are lifted to homogeneous coordinates first.
/// Matches eval_sequential within 1e-10 for contractive/orthogonal operators.
inline Trajectory scan_forward(const OperatorSequence& seq, const Vector& alpha,
                               ScanStats* stats = nullptr) {
  seq.validate();
  const std::size_t t = seq.length();
  if (t > 0 && seq.ops.front().rows() != alpha.dim())
    throw ShapeError("scan_forward: alpha dim mismatch");
  Trajectory traj;
  traj.states.reserve(t + 1);
  traj.states.push_back(alpha);
  if (t == 0) {
    if (stats) *stats = {};
    return traj;
  }
  if (t < detail::kSequentialCutoff) {
    Vector h = alpha;
    for (std::size_t i = 0; i < t; ++i) {
      h = matvec(seq.ops[i], h);
      if (seq.affine()) h += seq.biases[i];
      if (!is_finite(h)) throw NumericError("scan_forward: non-finite state");
      traj.states.push_back(h);
    }
    if (stats) *stats = {};
    return traj;
  }
  std::vector<Matrix> prods;
  prods.reserve(t);
  if (seq.affine()) {
    for (std::size_t i = 0; i < t; ++i)
      prods.push_back(detail::lift_affine(seq.ops[i], seq.biases[i]));
  } else {
    prods = seq.ops;
  }
  detail::kogge_stone(prods, /*suffix=*/false, stats);
  const std::size_t d = alpha.dim();
  Vector lifted(seq.affine() ? d + 1 : d);
  for (std::size_t i = 0; i < d; ++i) lifted[i] = alpha[i];
  if (seq.affine()) lifted[d] = 1.0;
  for (std::size_t i = 0; i < t; ++i) {
    Vector h = matvec(prods[i], lifted);
    Vector state(d);
    for (std::size_t j = 0; j < d; ++j) state[j] = h[j];
    if (!is_finite(state)) throw NumericError("scan_forward: non-finite state");
    traj.states.push_back(std::move(state));
  }
  return traj;
}

/// Reverse adjoint scan: returns deltas[t] = delta_t for t = 0..T-1 where
/// delta_{t-1} = M_{x_t}^T delta_t + v_{t-1}, delta_T given. Computed as a
/// suffix scan over homogeneous (d+1)x(d+1) lifted operators.
inline AdjointSequence scan_backward(const OperatorSequence& seq,
                                     const AdjointSequence& injections,
                                     const Vector& delta_final,
                                     ScanStats* stats = nullptr) {
  seq.validate();
  const std::size_t t = seq.length();
  if (injections.deltas.size() != t) throw ShapeError("scan_backward: injection count");
  AdjointSequence out;
  out.deltas.resize(t);
  if (t == 0) {
    if (stats) *stats = {};
    return out;
  }
  const std::size_t d = seq.ops.front().rows();
  if (delta_final.dim() != d) throw ShapeError("scan_backward: delta_T dim");
  if (t < detail::kSequentialCutoff) {
    Vector delta = delta_final;
    for (std::size_t step = t; step-- > 0;) {
      delta = matvec(transpose(seq.ops[step]), delta) + injections.deltas[step];
      if (!is_finite(delta)) throw NumericError("scan_backward: non-finite adjoint");
      out.deltas[step] = delta;
    }
    if (stats) *stats = {};
    return out;
  }
  // B_step (1-indexed step = idx+1) maps hat(delta_step) -> hat(delta_{step-1}).
  std::vector<Matrix> lifted;
  lifted.reserve(t);
  for (std::size_t idx = 0; idx < t; ++idx)
    lifted.push_back(detail::lift_affine(transpose(seq.ops[idx]), injections.deltas[idx]));
  // Suffix products S_idx = B_{idx+1} B_{idx+2} ... B_T give
  // hat(delta_idx) = S_idx hat(delta_T).
  detail::kogge_stone(lifted, /*suffix=*/true, stats);
  Vector hat(d + 1);
  for (std::size_t i = 0; i < d; ++i) hat[i] = delta_final[i];
  hat[d] = 1.0;
  for (std::size_t idx = 0; idx < t; ++idx) {
    Vector h = matvec(lifted[idx], hat);
    Vector delta(d);
    for (std::size_t i = 0; i < d; ++i) delta[i] = h[i];
    if (!is_finite(delta)) throw NumericError("scan_backward: non-finite adjoint");
    out.deltas[idx] = std::move(delta);
  }
  return out;
}

}  // namespace rt
