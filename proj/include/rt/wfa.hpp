#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "rt/matrix.hpp"

namespace rt {

/// A weighted finite automaton as a linear representation: initial vector
/// alpha and one transition matrix per symbol. No final-weight vector; the
/// state sequence itself is the output of interest.
struct Wfa {
  std::size_t alphabet_size = 0;
  std::size_t dim = 0;
  Vector alpha;
  std::vector<Matrix> transitions;  // indexed by symbol

  void validate() const {
    if (transitions.size() != alphabet_size) throw ShapeError("Wfa: transition count");
    if (alpha.dim() != dim) throw ShapeError("Wfa: alpha dimension");
    for (const Matrix& m : transitions)
      if (m.rows() != dim || m.cols() != dim) throw ShapeError("Wfa: transition shape");
  }
};

/// State sequence h_0 = alpha through h_T.
struct Trajectory {
  std::vector<Vector> states;

  std::size_t steps() const { return states.empty() ? 0 : states.size() - 1; }
  const Vector& final_state() const { return states.back(); }
};

/// Left-to-right evaluation of the recurrence h_t = M_{x_t} h_{t-1}. This is
/// the ground-truth oracle the scan module is checked against.
inline Trajectory eval_sequential(const Wfa& wfa, const std::vector<int>& tokens) {
  Trajectory traj;
  traj.states.reserve(tokens.size() + 1);
  traj.states.push_back(wfa.alpha);
  for (int tok : tokens) {
    if (tok < 0 || static_cast<std::size_t>(tok) >= wfa.alphabet_size)
      throw InputError("eval_sequential: token out of alphabet");
    traj.states.push_back(matvec(wfa.transitions[tok], traj.states.back()));
  }
  return traj;
}

/// Parity of the count of 1s: M_0 = I, M_1 swaps the two states.
inline Wfa make_parity() {
  Wfa w;
  w.alphabet_size = 2;
  w.dim = 2;
  w.alpha = Vector::basis(2, 0);
  w.transitions = {Matrix::identity(2), Matrix{{0, 1}, {1, 0}}};
  return w;
}

/// The +/-1-valued parity series has a one-dimensional minimal
/// representation: the state flips sign on every 1.
inline Wfa make_signed_parity() {
  Wfa w;
  w.alphabet_size = 2;
  w.dim = 1;
  w.alpha = Vector(1, 1.0);
  w.transitions = {Matrix{{1.0}}, Matrix{{-1.0}}};
  return w;
}

/// Count of 1s mod k: M_1 is the cyclic permutation on k states.
inline Wfa make_mod_counter(std::size_t k) {
  if (k < 2) throw InputError("make_mod_counter: k must be >= 2");
  Wfa w;
  w.alphabet_size = 2;
  w.dim = k;
  w.alpha = Vector::basis(k, 0);
  Matrix shift(k, k);
  for (std::size_t j = 0; j < k; ++j) shift((j + 1) % k, j) = 1.0;
  w.transitions = {Matrix::identity(k), shift};
  return w;
}

/// Horner evaluation in the given base: state (value, 1), digit update
/// v <- base * v + digit.
inline Wfa make_horner(std::size_t base) {
  if (base < 2) throw InputError("make_horner: base must be >= 2");
  Wfa w;
  w.alphabet_size = base;
  w.dim = 2;
  w.alpha = {0, 1};
  w.transitions.reserve(base);
  for (std::size_t digit = 0; digit < base; ++digit)
    w.transitions.push_back(
        Matrix{{static_cast<double>(base), static_cast<double>(digit)}, {0, 1}});
  return w;
}

/// Input-independent block-diagonal rotations; after t steps block i holds
/// (cos t*theta_i, sin t*theta_i), i.e. a rotary positional encoding.
inline Wfa make_rope(const std::vector<double>& freqs, std::size_t alphabet_size = 2) {
  if (freqs.empty()) throw InputError("make_rope: need at least one frequency");
  const std::size_t d = 2 * freqs.size();
  Matrix rot(d, d);
  Vector alpha(d);
  for (std::size_t i = 0; i < freqs.size(); ++i) {
    const double c = std::cos(freqs[i]), s = std::sin(freqs[i]);
    rot(2 * i, 2 * i) = c;
    rot(2 * i, 2 * i + 1) = -s;
    rot(2 * i + 1, 2 * i) = s;
    rot(2 * i + 1, 2 * i + 1) = c;
    alpha[2 * i] = 1.0;
  }
  Wfa w;
  w.alphabet_size = alphabet_size;
  w.dim = d;
  w.alpha = alpha;
  w.transitions.assign(alphabet_size, rot);
  return w;
}

/// Block-diagonal combination: both automata run in parallel on the same
/// input, states concatenated.
inline Wfa direct_sum(const Wfa& a, const Wfa& b) {
  if (a.alphabet_size != b.alphabet_size)
    throw InputError("direct_sum: alphabet size mismatch");
  Wfa w;
  w.alphabet_size = a.alphabet_size;
  w.dim = a.dim + b.dim;
  w.alpha = Vector(w.dim);
  for (std::size_t i = 0; i < a.dim; ++i) w.alpha[i] = a.alpha[i];
  for (std::size_t i = 0; i < b.dim; ++i) w.alpha[a.dim + i] = b.alpha[i];
  w.transitions.reserve(w.alphabet_size);
  for (std::size_t s = 0; s < w.alphabet_size; ++s) {
    Matrix m(w.dim, w.dim);
    for (std::size_t i = 0; i < a.dim; ++i)
      for (std::size_t j = 0; j < a.dim; ++j) m(i, j) = a.transitions[s](i, j);
    for (std::size_t i = 0; i < b.dim; ++i)
      for (std::size_t j = 0; j < b.dim; ++j) m(a.dim + i, a.dim + j) = b.transitions[s](i, j);
    w.transitions.push_back(m);
  }
  return w;
}

namespace detail {

/// All strings over the alphabet up to max_len, ordered by length then
/// lexicographically (empty string first), as token sequences.
inline std::vector<std::vector<int>> enumerate_strings(std::size_t alphabet,
                                                       std::size_t max_len) {
  std::vector<std::vector<int>> out;
  out.push_back({});
  std::size_t begin = 0;
  for (std::size_t len = 1; len <= max_len; ++len) {
    const std::size_t end = out.size();
    for (std::size_t i = begin; i < end; ++i)
      for (std::size_t s = 0; s < alphabet; ++s) {
        std::vector<int> next = out[i];
        next.push_back(static_cast<int>(s));
        out.push_back(std::move(next));
      }
    begin = end;
  }
  // Generation above appends children of the previous layer in lexicographic
  // order of the parent, which is already length-then-lex.
  return out;
}

}  // namespace detail

/// Numeric rank of the finite Hankel block over all prefixes/suffixes up to
/// max_len, with series value beta^T M_v M_u alpha. The readout beta is fixed
/// to the graded vector (1, 2, ..., d); an all-ones beta would be a left
/// fixed vector of every permutation/stochastic transition and collapse the
/// block to rank 1. For a minimal automaton and sufficient max_len the rank
/// equals the state dimension (Fliess).
inline std::size_t hankel_rank(const Wfa& wfa, std::size_t max_len, double tol) {
  std::vector<std::vector<int>> strings = detail::enumerate_strings(wfa.alphabet_size, max_len);
  const std::size_t n = strings.size();
  if (n * n > std::size_t(10'000'000)) throw ResourceError("hankel_rank: block too large");
  // Column factors: states M_u alpha per prefix u.
  std::vector<Vector> states(n);
  // Row factors: functionals beta^T M_v per suffix v.
  std::vector<Vector> funcs(n);
  Vector beta(wfa.dim);
  for (std::size_t i = 0; i < wfa.dim; ++i) beta[i] = static_cast<double>(i + 1);
  for (std::size_t i = 0; i < n; ++i) {
    Vector s = wfa.alpha;
    for (int tok : strings[i]) s = matvec(wfa.transitions[tok], s);
    states[i] = s;
    // beta^T M_v = beta^T M_{v_last} ... M_{v_1}: accumulate right-to-left.
    Vector f = beta;
    for (std::size_t j = strings[i].size(); j-- > 0;)
      f = matvec(transpose(wfa.transitions[strings[i][j]]), f);
    funcs[i] = f;
  }
  Matrix h(n, n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) h(r, c) = dot(funcs[r], states[c]);
  return numeric_rank(h, tol);
}

}  // namespace rt
