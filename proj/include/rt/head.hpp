#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rt/scan.hpp"
#include "rt/tape.hpp"

namespace rt {

enum class HeadKind {
  kScaledCayley,
  kStochastic,
  kDplr,
  kAffine,
  kSharedBasis,
  kMixture,
};

/// Static description of one transition head. Mixture heads nest sub-configs
/// and act as the direct sum of their parts.
struct HeadConfig {
  HeadKind kind = HeadKind::kScaledCayley;
  std::size_t dim = 0;
  std::size_t alphabet_size = 0;
  bool conservation = true;      // scaled_cayley: gain fixed at 1
  std::size_t rank = 1;          // dplr low-rank factor width
  double gamma = 1.0;            // dplr spectral bound
  std::size_t num_basis = 0;     // shared_basis
  std::vector<HeadConfig> subs;  // mixture

  std::size_t total_dim() const {
    if (kind != HeadKind::kMixture) return dim;
    std::size_t d = 0;
    for (const HeadConfig& s : subs) d += s.total_dim();
    return d;
  }

  void validate() const {
    if (kind == HeadKind::kMixture) {
      if (subs.empty()) throw ConfigError("head: mixture needs sub-heads");
      for (const HeadConfig& s : subs) {
        s.validate();
        if (s.kind == HeadKind::kMixture) throw ConfigError("head: nested mixture");
        if (s.alphabet_size != subs.front().alphabet_size)
          throw ConfigError("head: mixture alphabet mismatch");
      }
      return;
    }
    if (dim == 0 || alphabet_size == 0) throw ConfigError("head: zero dim/alphabet");
    if (kind == HeadKind::kDplr) {
      if (rank == 0) throw ConfigError("head: dplr rank must be >= 1");
      if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("head: gamma out of (0,1]");
    }
    if (kind == HeadKind::kSharedBasis && num_basis == 0)
      throw ConfigError("head: shared_basis needs num_basis >= 1");
  }

  std::size_t effective_alphabet() const {
    return kind == HeadKind::kMixture ? subs.front().alphabet_size : alphabet_size;
  }
};

/// Spectral normalization used by the DPLR head: w / max(1, ||w||_2 / gamma).
/// Returns w bit-identically when the norm is already within the bound.
inline Matrix spectral_project(const Matrix& w, double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw InputError("spectral_project: gamma");
  const double s = spectral_norm(w) / gamma;
  if (s <= 1.0) return w;
  return w * (1.0 / s);
}

/// Per-symbol transition nodes recorded on one tape; symbol matrices are
/// computed once and reused for every position that carries the symbol.
struct BuiltTransitions {
  std::vector<NodeId> matrices;  // one per symbol
  std::vector<NodeId> biases;    // affine kinds only (d x 1 nodes)
  bool affine = false;
};

class TransitionHead {
 public:
  explicit TransitionHead(HeadConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    allocate(cfg_, "");
  }

  const HeadConfig& config() const { return cfg_; }
  std::size_t dim() const { return cfg_.total_dim(); }
  std::size_t alphabet_size() const { return cfg_.effective_alphabet(); }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// Near-identity initialization: every transition starts close to I so the
  /// head acts as an integrator before training shapes it.
  void init_near_identity(double eps, double nu, std::uint64_t seed) {
    if (eps < 0.0 || eps > 0.1) throw InputError("init: eps out of [0, 0.1]");
    if (nu < 0.0 || nu > 0.1) throw InputError("init: nu out of [0, 0.1]");
    Rng rng(seed);
    init_rec(cfg_, "", eps, nu, rng);
  }

  /// Records every per-symbol transition (and bias, for affine kinds) on the
  /// tape so a backward sweep reaches the underlying parameters.
  BuiltTransitions build_symbol_transitions(Tape& tape) const {
    return build_rec(cfg_, "", tape);
  }

  /// Operator stream for a token sequence, sharing the per-symbol cache.
  OperatorSequence build_transitions(const std::vector<int>& tokens, Tape& tape,
                                     const BuiltTransitions* prebuilt = nullptr) const {
    BuiltTransitions local;
    if (!prebuilt) {
      local = build_symbol_transitions(tape);
      prebuilt = &local;
    }
    OperatorSequence seq;
    seq.ops.reserve(tokens.size());
    const std::size_t sigma = alphabet_size();
    for (int tok : tokens) {
      if (tok < 0 || static_cast<std::size_t>(tok) >= sigma)
        throw InputError("head: token out of alphabet");
      seq.ops.push_back(tape.value(prebuilt->matrices[tok]));
      if (prebuilt->affine) {
        const Matrix& b = tape.value(prebuilt->biases[tok]);
        Vector bv(b.rows());
        for (std::size_t i = 0; i < b.rows(); ++i) bv[i] = b(i, 0);
        seq.biases.push_back(std::move(bv));
      }
    }
    return seq;
  }

  /// States h_0..h_T through the parallel scan.
  Trajectory forward(const std::vector<int>& tokens, const Vector& alpha) const {
    Tape tape;
    return scan_forward(build_transitions(tokens, tape), alpha);
  }

  /// Parameter gradients given per-position upstream gradients v_1..v_T on
  /// the states h_1..h_T. The adjoint recurrence
  ///   delta_{t-1} = M_{x_t}^T delta_t + v_{t-1}
  /// runs as a suffix scan; per-symbol seeds sum(delta_t h_{t-1}^T) then
  /// re-enter the tape to reach the raw parameters of each kind.
  GradStore backward(const std::vector<int>& tokens, const Trajectory& traj,
                     const AdjointSequence& upstream) const {
    const std::size_t t = tokens.size();
    if (upstream.deltas.size() != t) throw ShapeError("head backward: upstream length");
    if (traj.states.size() != t + 1) throw ShapeError("head backward: trajectory length");
    if (t == 0) return {};
    Tape tape;
    BuiltTransitions built = build_symbol_transitions(tape);
    OperatorSequence seq = build_transitions(tokens, tape, &built);

    AdjointSequence inj;
    inj.deltas.resize(t, Vector(dim()));
    for (std::size_t i = 1; i < t; ++i) inj.deltas[i] = upstream.deltas[i - 1];
    AdjointSequence adj = scan_backward(seq, inj, upstream.deltas[t - 1]);

    const std::size_t sigma = alphabet_size();
    std::vector<Matrix> mat_seed(sigma);
    std::vector<Vector> bias_seed;
    std::vector<bool> used(sigma, false);
    if (built.affine) bias_seed.assign(sigma, Vector(dim()));
    for (std::size_t idx = 0; idx < t; ++idx) {
      const Vector& delta =
          (idx + 1 < t) ? adj.deltas[idx + 1] : upstream.deltas[t - 1];
      const int tok = tokens[idx];
      Matrix g = outer(delta, traj.states[idx]);
      if (used[tok]) {
        mat_seed[tok] += g;
      } else {
        mat_seed[tok] = std::move(g);
        used[tok] = true;
      }
      if (built.affine) bias_seed[tok] += delta;
    }
    std::vector<std::pair<NodeId, Matrix>> seeds;
    for (std::size_t s = 0; s < sigma; ++s) {
      if (!used[s]) continue;
      seeds.emplace_back(built.matrices[s], mat_seed[s]);
      if (built.affine) {
        Matrix gb(dim(), 1);
        for (std::size_t i = 0; i < dim(); ++i) gb(i, 0) = bias_seed[s][i];
        seeds.emplace_back(built.biases[s], std::move(gb));
      }
    }
    return tape.backward_from(seeds);
  }

  /// Kind-specific structural invariants; the trainer re-runs this every 100
  /// steps so the checks hold throughout optimization, not just at init.
  void check_invariants() const { check_rec(cfg_, ""); }

 private:
  static std::string sym_name(const std::string& prefix, const char* base,
                              std::size_t s) {
    return prefix + base + std::to_string(s);
  }

  void allocate(const HeadConfig& c, const std::string& prefix) {
    switch (c.kind) {
      case HeadKind::kScaledCayley:
        for (std::size_t s = 0; s < c.alphabet_size; ++s) {
          params_[sym_name(prefix, "w", s)] = Matrix(c.dim, c.dim);
          if (!c.conservation) params_[sym_name(prefix, "theta", s)] = Matrix(1, 1);
        }
        break;
      case HeadKind::kStochastic:
        for (std::size_t s = 0; s < c.alphabet_size; ++s)
          params_[sym_name(prefix, "logits", s)] = Matrix(c.dim, c.dim);
        break;
      case HeadKind::kDplr:
        for (std::size_t s = 0; s < c.alphabet_size; ++s) {
          params_[sym_name(prefix, "d", s)] = Matrix(c.dim, 1);
          params_[sym_name(prefix, "u", s)] = Matrix(c.dim, c.rank);
          params_[sym_name(prefix, "v", s)] = Matrix(c.dim, c.rank);
        }
        break;
      case HeadKind::kAffine:
        for (std::size_t s = 0; s < c.alphabet_size; ++s) {
          params_[sym_name(prefix, "a", s)] = Matrix(c.dim, c.dim);
          params_[sym_name(prefix, "b", s)] = Matrix(c.dim, 1);
        }
        break;
      case HeadKind::kSharedBasis:
        for (std::size_t k = 0; k < c.num_basis; ++k)
          params_[sym_name(prefix, "basis", k)] = Matrix(c.dim, c.dim);
        params_[prefix + "coef"] = Matrix(c.alphabet_size, c.num_basis);
        break;
      case HeadKind::kMixture:
        for (std::size_t i = 0; i < c.subs.size(); ++i)
          allocate(c.subs[i], prefix + "s" + std::to_string(i) + ".");
        break;
    }
  }

  void init_rec(const HeadConfig& c, const std::string& prefix, double eps, double nu,
                Rng& rng) {
    auto fill_gaussian = [&](Matrix& m, double mean_diag) {
      for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j)
          m(i, j) = (i == j ? mean_diag : 0.0) + gaussian(rng, 0.0, nu);
    };
    switch (c.kind) {
      case HeadKind::kScaledCayley:
        for (std::size_t s = 0; s < c.alphabet_size; ++s) {
          fill_gaussian(params_.at(sym_name(prefix, "w", s)), 0.0);
          if (!c.conservation)
            // logit +4 => gain ~ 0.982: decay heads start near-conservative.
            params_.at(sym_name(prefix, "theta", s))(0, 0) = 4.0;
        }
        break;
      case HeadKind::kStochastic:
        // 4*I before softmax puts > 0.9 of each column's mass on the diagonal
        // for d <= 8, the simplex analogue of near-identity init.
        for (std::size_t s = 0; s < c.alphabet_size; ++s)
          fill_gaussian(params_.at(sym_name(prefix, "logits", s)), 4.0);
        break;
      case HeadKind::kDplr:
        for (std::size_t s = 0; s < c.alphabet_size; ++s) {
          Matrix& d = params_.at(sym_name(prefix, "d", s));
          for (std::size_t i = 0; i < c.dim; ++i) d(i, 0) = uniform(rng, 1.0 - eps, 1.0);
          fill_gaussian(params_.at(sym_name(prefix, "u", s)), 0.0);
          fill_gaussian(params_.at(sym_name(prefix, "v", s)), 0.0);
        }
        break;
      case HeadKind::kAffine:
        for (std::size_t s = 0; s < c.alphabet_size; ++s) {
          fill_gaussian(params_.at(sym_name(prefix, "a", s)), 1.0);
          params_.at(sym_name(prefix, "b", s)) = Matrix(c.dim, 1);
        }
        break;
      case HeadKind::kSharedBasis:
        // First basis starts at I and each symbol leans on it with unit
        // coefficient, so every M_sigma begins near-identity.
        for (std::size_t k = 0; k < c.num_basis; ++k)
          fill_gaussian(params_.at(sym_name(prefix, "basis", k)), k == 0 ? 1.0 : 0.0);
        {
          Matrix& coef = params_.at(prefix + "coef");
          for (std::size_t s = 0; s < c.alphabet_size; ++s)
            for (std::size_t k = 0; k < c.num_basis; ++k)
              coef(s, k) = (k == 0 ? 1.0 : 0.0) + gaussian(rng, 0.0, nu);
        }
        break;
      case HeadKind::kMixture:
        for (std::size_t i = 0; i < c.subs.size(); ++i)
          init_rec(c.subs[i], prefix + "s" + std::to_string(i) + ".", eps, nu, rng);
        break;
    }
  }

  NodeId leaf(Tape& tape, const std::string& name) const {
    return tape.leaf(params_.at(name), name);
  }

  static NodeId block_diag(Tape& t, NodeId a, NodeId b) {
    const Matrix& av = t.value(a);
    const Matrix& bv = t.value(b);
    NodeId top = t.concat_cols({a, t.constant(Matrix(av.rows(), bv.cols()))});
    NodeId bot = t.concat_cols({t.constant(Matrix(bv.rows(), av.cols())), b});
    return t.transpose(t.concat_cols({t.transpose(top), t.transpose(bot)}));
  }

  static NodeId concat_rows(Tape& t, NodeId a, NodeId b) {
    return t.transpose(t.concat_cols({t.transpose(a), t.transpose(b)}));
  }

  BuiltTransitions build_rec(const HeadConfig& c, const std::string& prefix,
                             Tape& tape) const {
    BuiltTransitions out;
    switch (c.kind) {
      case HeadKind::kScaledCayley: {
        NodeId eye = tape.constant(Matrix::identity(c.dim));
        for (std::size_t s = 0; s < c.alphabet_size; ++s) {
          NodeId w = leaf(tape, sym_name(prefix, "w", s));
          NodeId a = tape.sub(w, tape.transpose(w));
          // (I + A)(I - A)^{-1}; the factors commute, so the solve form
          // (I - A)^{-1}(I + A) is the same matrix.
          NodeId q = tape.solve(tape.sub(eye, a), tape.add(eye, a));
          out.matrices.push_back(
              c.conservation
                  ? q
                  : tape.scalar_mul(
                        tape.sigmoid(leaf(tape, sym_name(prefix, "theta", s))), q));
        }
        break;
      }
      case HeadKind::kStochastic:
        for (std::size_t s = 0; s < c.alphabet_size; ++s)
          out.matrices.push_back(
              tape.softmax_cols(leaf(tape, sym_name(prefix, "logits", s))));
        break;
      case HeadKind::kDplr:
        for (std::size_t s = 0; s < c.alphabet_size; ++s) {
          NodeId u = leaf(tape, sym_name(prefix, "u", s));
          NodeId v = leaf(tape, sym_name(prefix, "v", s));
          NodeId m = tape.add(tape.diag(leaf(tape, sym_name(prefix, "d", s))),
                              tape.matmul(u, tape.transpose(v)));
          // The projection factor is treated as a constant in backward (the
          // usual projected-gradient convention), so only the scale — not the
          // spectral norm's own derivative — enters the tape.
          const double s_norm = spectral_norm(tape.value(m)) / c.gamma;
          out.matrices.push_back(s_norm > 1.0 ? tape.scale(m, 1.0 / s_norm) : m);
        }
        break;
      case HeadKind::kAffine:
        out.affine = true;
        for (std::size_t s = 0; s < c.alphabet_size; ++s) {
          out.matrices.push_back(leaf(tape, sym_name(prefix, "a", s)));
          out.biases.push_back(leaf(tape, sym_name(prefix, "b", s)));
        }
        break;
      case HeadKind::kSharedBasis: {
        NodeId coef = leaf(tape, prefix + "coef");
        std::vector<NodeId> bases;
        for (std::size_t k = 0; k < c.num_basis; ++k)
          bases.push_back(leaf(tape, sym_name(prefix, "basis", k)));
        for (std::size_t s = 0; s < c.alphabet_size; ++s) {
          NodeId m = tape.scalar_mul(tape.slice(coef, s, 1, 0, 1), bases[0]);
          for (std::size_t k = 1; k < c.num_basis; ++k)
            m = tape.add(m, tape.scalar_mul(tape.slice(coef, s, 1, k, 1), bases[k]));
          out.matrices.push_back(m);
        }
        break;
      }
      case HeadKind::kMixture: {
        std::vector<BuiltTransitions> parts;
        for (std::size_t i = 0; i < c.subs.size(); ++i)
          parts.push_back(build_rec(c.subs[i], prefix + "s" + std::to_string(i) + ".",
                                    tape));
        for (const BuiltTransitions& p : parts) out.affine = out.affine || p.affine;
        const std::size_t sigma = c.effective_alphabet();
        for (std::size_t s = 0; s < sigma; ++s) {
          NodeId m = parts[0].matrices[s];
          for (std::size_t i = 1; i < parts.size(); ++i)
            m = block_diag(tape, m, parts[i].matrices[s]);
          out.matrices.push_back(m);
          if (out.affine) {
            auto bias_of = [&](std::size_t i) {
              return parts[i].affine
                         ? parts[i].biases[s]
                         : tape.constant(Matrix(c.subs[i].total_dim(), 1));
            };
            NodeId b = bias_of(0);
            for (std::size_t i = 1; i < parts.size(); ++i)
              b = concat_rows(tape, b, bias_of(i));
            out.biases.push_back(b);
          }
        }
        break;
      }
    }
    return out;
  }

  void check_rec(const HeadConfig& c, const std::string& prefix) const {
    if (c.kind == HeadKind::kMixture) {
      for (std::size_t i = 0; i < c.subs.size(); ++i)
        check_rec(c.subs[i], prefix + "s" + std::to_string(i) + ".");
      return;
    }
    Tape tape;
    BuiltTransitions built = build_rec(c, prefix, tape);
    for (std::size_t s = 0; s < c.alphabet_size; ++s) {
      const Matrix& m = tape.value(built.matrices[s]);
      switch (c.kind) {
        case HeadKind::kScaledCayley: {
          double g = 1.0;
          if (!c.conservation) {
            const double theta = params_.at(sym_name(prefix, "theta", s))(0, 0);
            g = 1.0 / (1.0 + std::exp(-theta));
            if (!(g > 0.0 && g < 1.0))
              throw NumericError("head invariant: gain outside (0,1)");
          }
          const Matrix q = m * (1.0 / g);
          const Matrix gram = matmul(transpose(q), q);
          if (max_abs(gram - Matrix::identity(c.dim)) > 1e-10)
            throw NumericError("head invariant: Cayley factor not orthogonal");
          break;
        }
        case HeadKind::kStochastic:
          for (std::size_t j = 0; j < c.dim; ++j) {
            double col = 0.0;
            for (std::size_t i = 0; i < c.dim; ++i) {
              if (m(i, j) < 0.0)
                throw NumericError("head invariant: negative stochastic entry");
              col += m(i, j);
            }
            if (std::abs(col - 1.0) > 1e-12)
              throw NumericError("head invariant: column sum drifted");
          }
          break;
        case HeadKind::kDplr:
          if (spectral_norm(m) > c.gamma + 1e-8)
            throw NumericError("head invariant: spectral bound violated");
          break;
        default:
          break;  // affine / shared_basis impose no structural constraint
      }
    }
  }

  HeadConfig cfg_;
  ParamStore params_;
};

}  // namespace rt
