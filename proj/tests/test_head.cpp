#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rt/head.hpp"

using namespace rt;

namespace {

std::vector<int> cycle_tokens(std::size_t t, std::size_t alphabet) {
  std::vector<int> out(t);
  for (std::size_t i = 0; i < t; ++i) out[i] = static_cast<int>(i % alphabet);
  return out;
}

double quadratic_loss(const Trajectory& tr) {
  double s = 0.0;
  for (std::size_t t = 1; t < tr.states.size(); ++t) {
    const double n = tr.states[t].norm2();
    s += n * n;
  }
  return s;
}

/// Central finite differences on L = sum_t ||h_t||^2 over every parameter
/// entry; returns the max relative error against head.backward.
double head_fd_check(TransitionHead& head, const std::vector<int>& tokens,
                     const Vector& alpha) {
  Trajectory tr = head.forward(tokens, alpha);
  AdjointSequence up;
  for (std::size_t t = 1; t < tr.states.size(); ++t)
    up.deltas.push_back(tr.states[t] * 2.0);
  GradStore grads = head.backward(tokens, tr, up);
  const double eps = 1e-5;
  double worst = 0.0;
  for (auto& [name, value] : head.params()) {
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value.data()[i];
      value.data()[i] = saved + eps;
      const double lp = quadratic_loss(head.forward(tokens, alpha));
      value.data()[i] = saved - eps;
      const double lm = quadratic_loss(head.forward(tokens, alpha));
      value.data()[i] = saved;
      const double fd = (lp - lm) / (2.0 * eps);
      auto it = grads.find(name);
      const double an = it == grads.end() ? 0.0 : it->second.data()[i];
      worst = std::max(worst,
                       std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)}));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("cayley of zero weights is the identity") {
  TransitionHead head({HeadKind::kScaledCayley, 3, 2});
  Tape tape;
  BuiltTransitions built = head.build_symbol_transitions(tape);
  for (NodeId m : built.matrices)
    CHECK(max_abs(tape.value(m) - Matrix::identity(3)) == 0.0);
}

TEST_CASE("2x2 cayley matches the closed-form rotation") {
  // W = [[0, a], [0, 0]] gives A = [[0, a], [-a, 0]] and
  // M = 1/(1+a^2) [[1-a^2, 2a], [-2a, 1-a^2]], a rotation by 2*atan(a).
  for (double a : {0.3, -0.7, 1.5}) {
    TransitionHead head({HeadKind::kScaledCayley, 2, 1});
    head.params().at("w0")(0, 1) = a;
    Tape tape;
    const Matrix& m = tape.value(head.build_symbol_transitions(tape).matrices[0]);
    const double theta = 2.0 * std::atan(a);
    Matrix oracle = {{std::cos(theta), std::sin(theta)},
                     {-std::sin(theta), std::cos(theta)}};
    CHECK(max_abs(m - oracle) <= 1e-12);
  }
}

TEST_CASE("uniform stochastic logits give the uniform column-stochastic matrix") {
  TransitionHead head({HeadKind::kStochastic, 4, 1});
  Tape tape;
  const Matrix& m = tape.value(head.build_symbol_transitions(tape).matrices[0]);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(m(i, j) == doctest::Approx(0.25));
}

TEST_CASE("spectral projection") {
  Rng rng(41);
  Matrix small(3, 3);
  small(0, 0) = 0.5;
  CHECK(spectral_project(small, 0.99) == small);  // below the bound: untouched

  Matrix scaled = Matrix::identity(3) * (2.0 * 0.7);
  CHECK(max_abs(spectral_project(scaled, 0.7) - Matrix::identity(3) * 0.7) <= 1e-12);

  Matrix w(5, 5);
  for (double& v : w.data()) v = gaussian(rng, 0.0, 1.0);
  w *= 3.0 / spectral_norm(w);
  const double post = spectral_norm(spectral_project(w, 0.9));
  CHECK(post >= 0.9 - 1e-8);
  CHECK(post <= 0.9 + 1e-8);

  CHECK_THROWS_AS(spectral_project(w, 1.5), InputError);
}

TEST_CASE("near-identity head drifts slowly from alpha") {
  const double nu = 0.01;
  TransitionHead head({HeadKind::kScaledCayley, 4, 2});
  head.init_near_identity(0.0, nu, 7);
  Vector alpha = Vector::basis(4, 0);
  Trajectory tr = head.forward(cycle_tokens(100, 2), alpha);
  CHECK((tr.states.back() - alpha).norm2() <= 100.0 * nu * 4.0);
}

TEST_CASE("stochastic head conserves the simplex mass") {
  TransitionHead head({HeadKind::kStochastic, 5, 3});
  head.init_near_identity(0.0, 0.05, 11);
  Vector alpha(5);
  for (std::size_t i = 0; i < 5; ++i) alpha[i] = 0.2;
  Trajectory tr = head.forward(cycle_tokens(200, 3), alpha);
  for (const Vector& h : tr.states) CHECK(std::abs(h.sum() - 1.0) <= 1e-12);
}

TEST_CASE("conservation cayley preserves the l2 norm to T = 4096") {
  TransitionHead head({HeadKind::kScaledCayley, 4, 2});
  head.init_near_identity(0.0, 0.1, 13);
  Vector alpha = Vector::basis(4, 1);
  Trajectory tr = head.forward(cycle_tokens(4096, 2), alpha);
  for (const Vector& h : tr.states) CHECK(std::abs(h.norm2() - 1.0) <= 1e-10);
}

TEST_CASE("zero upstream gives zero gradients") {
  TransitionHead head({HeadKind::kStochastic, 3, 2});
  head.init_near_identity(0.0, 0.05, 17);
  std::vector<int> toks = cycle_tokens(10, 2);
  Trajectory tr = head.forward(toks, Vector::basis(3, 0));
  AdjointSequence up;
  up.deltas.assign(10, Vector(3));
  GradStore g = head.backward(toks, tr, up);
  for (const auto& [name, grad] : g) CHECK(max_abs(grad) == 0.0);
}

TEST_CASE("orthogonal head propagates a lone final adjoint without decay") {
  TransitionHead head({HeadKind::kScaledCayley, 4, 2});
  head.init_near_identity(0.0, 0.1, 19);
  std::vector<int> toks = cycle_tokens(128, 2);
  Tape tape;
  OperatorSequence seq = head.build_transitions(toks, tape);
  AdjointSequence inj;
  inj.deltas.assign(128, Vector(4));
  Vector delta_t = Vector::basis(4, 2);
  AdjointSequence adj = scan_backward(seq, inj, delta_t);
  CHECK(std::abs(adj.deltas[0].norm2() - delta_t.norm2()) <= 1e-10);
}

TEST_CASE("finite differences validate every head kind") {
  Vector alpha(3);
  alpha[0] = 1.0;
  alpha[1] = 0.4;
  alpha[2] = -0.2;
  std::vector<int> toks = {0, 1, 0, 0, 1, 1};

  SUBCASE("scaled cayley, conservation") {
    TransitionHead head({HeadKind::kScaledCayley, 3, 2});
    head.init_near_identity(0.0, 0.1, 23);
    CHECK(head_fd_check(head, toks, alpha) <= 1e-5);
  }
  SUBCASE("scaled cayley, learned gain") {
    HeadConfig cfg{HeadKind::kScaledCayley, 3, 2};
    cfg.conservation = false;
    TransitionHead head(cfg);
    head.init_near_identity(0.0, 0.1, 29);
    CHECK(head_fd_check(head, toks, alpha) <= 1e-5);
  }
  SUBCASE("stochastic") {
    TransitionHead head({HeadKind::kStochastic, 3, 2});
    head.init_near_identity(0.0, 0.1, 31);
    CHECK(head_fd_check(head, toks, alpha) <= 1e-5);
  }
  SUBCASE("dplr, projection inactive") {
    HeadConfig cfg{HeadKind::kDplr, 3, 2};
    cfg.rank = 2;
    cfg.gamma = 1.0;
    TransitionHead head(cfg);
    head.init_near_identity(0.05, 0.05, 37);
    for (int s = 0; s < 2; ++s)
      head.params().at("d" + std::to_string(s)) *= 0.5;
    CHECK(head_fd_check(head, toks, alpha) <= 1e-5);
  }
  SUBCASE("affine") {
    TransitionHead head({HeadKind::kAffine, 3, 2});
    head.init_near_identity(0.0, 0.1, 41);
    head.params().at("b0")(1, 0) = 0.3;
    CHECK(head_fd_check(head, toks, alpha) <= 1e-5);
  }
  SUBCASE("shared basis") {
    HeadConfig cfg{HeadKind::kSharedBasis, 3, 2};
    cfg.num_basis = 2;
    TransitionHead head(cfg);
    head.init_near_identity(0.0, 0.1, 43);
    CHECK(head_fd_check(head, toks, alpha) <= 1e-5);
  }
  SUBCASE("mixture of cayley and stochastic") {
    HeadConfig cfg;
    cfg.kind = HeadKind::kMixture;
    cfg.subs = {{HeadKind::kScaledCayley, 2, 2}, {HeadKind::kStochastic, 2, 2}};
    TransitionHead head(cfg);
    head.init_near_identity(0.0, 0.1, 47);
    Vector a4(4);
    a4[0] = 1.0;
    a4[2] = 0.5;
    a4[3] = 0.5;
    CHECK(head_fd_check(head, {0, 1, 1, 0, 1}, a4) <= 1e-5);
  }
}

TEST_CASE("degenerate dplr init is exactly the identity") {
  HeadConfig cfg{HeadKind::kDplr, 4, 2};
  cfg.rank = 2;
  cfg.gamma = 1.0;
  TransitionHead head(cfg);
  head.init_near_identity(0.0, 0.0, 1);
  Tape tape;
  BuiltTransitions built = head.build_symbol_transitions(tape);
  for (NodeId m : built.matrices)
    CHECK(max_abs(tape.value(m) - Matrix::identity(4)) == 0.0);
}

TEST_CASE("noiseless stochastic init concentrates e^4/(e^4+3) per column") {
  TransitionHead head({HeadKind::kStochastic, 4, 1});
  head.init_near_identity(0.0, 0.0, 1);
  Tape tape;
  const Matrix& m = tape.value(head.build_symbol_transitions(tape).matrices[0]);
  const double diag = std::exp(4.0) / (std::exp(4.0) + 3.0);
  for (std::size_t j = 0; j < 4; ++j) CHECK(m(j, j) == doctest::Approx(diag));
}

TEST_CASE("default init acts as an integrator over T = 40") {
  HeadConfig cfg{HeadKind::kDplr, 6, 3};
  cfg.rank = 2;
  cfg.gamma = 1.0;
  TransitionHead head(cfg);
  // Diagonal entries ~U[1-eps, 1] decay like (1-eps/2)^T, so eps must be
  // well under 2*0.1/T = 5e-3 for the 10% drift budget at T = 40.
  head.init_near_identity(0.002, 0.01, 53);
  Vector alpha(6);
  for (std::size_t i = 0; i < 6; ++i) alpha[i] = 1.0;
  Trajectory tr = head.forward(cycle_tokens(40, 3), alpha);
  CHECK((tr.states.back() - alpha).norm2() / alpha.norm2() <= 0.1);
}

TEST_CASE("mixture trajectory is the exact concatenation of sub trajectories") {
  HeadConfig c1{HeadKind::kScaledCayley, 2, 2};
  HeadConfig c2{HeadKind::kStochastic, 3, 2};
  HeadConfig mix;
  mix.kind = HeadKind::kMixture;
  mix.subs = {c1, c2};
  TransitionHead head(mix);
  head.init_near_identity(0.0, 0.08, 59);

  TransitionHead sub1(c1);
  TransitionHead sub2(c2);
  for (auto& [name, value] : sub1.params()) value = head.params().at("s0." + name);
  for (auto& [name, value] : sub2.params()) value = head.params().at("s1." + name);

  std::vector<int> toks = cycle_tokens(50, 2);
  Vector a1 = Vector::basis(2, 0);
  Vector a2(3);
  a2[0] = 0.5;
  a2[1] = 0.25;
  a2[2] = 0.25;
  Vector alpha(5);
  for (std::size_t i = 0; i < 2; ++i) alpha[i] = a1[i];
  for (std::size_t i = 0; i < 3; ++i) alpha[2 + i] = a2[i];

  Trajectory tr = head.forward(toks, alpha);
  Trajectory t1 = sub1.forward(toks, a1);
  Trajectory t2 = sub2.forward(toks, a2);
  for (std::size_t t = 0; t < tr.states.size(); ++t) {
    for (std::size_t i = 0; i < 2; ++i) CHECK(tr.states[t][i] == t1.states[t][i]);
    for (std::size_t i = 0; i < 3; ++i) CHECK(tr.states[t][2 + i] == t2.states[t][i]);
  }
}

TEST_CASE("contractive head keeps the adjoint stream bounded") {
  HeadConfig cfg{HeadKind::kDplr, 4, 2};
  cfg.rank = 2;
  cfg.gamma = 0.9;
  TransitionHead head(cfg);
  head.init_near_identity(0.05, 0.05, 61);
  std::vector<int> toks = cycle_tokens(256, 2);
  Tape tape;
  OperatorSequence seq = head.build_transitions(toks, tape);
  for (const Matrix& m : seq.ops) CHECK(spectral_norm(m) <= 0.9 + 1e-8);

  Rng rng(62);
  AdjointSequence inj;
  double vmax = 0.0;
  for (std::size_t i = 0; i < 256; ++i) {
    Vector v(4);
    for (std::size_t j = 0; j < 4; ++j) v[j] = gaussian(rng, 0.0, 1.0);
    vmax = std::max(vmax, v.norm2());
    inj.deltas.push_back(std::move(v));
  }
  Vector delta_t = Vector::basis(4, 0) * 3.0;
  AdjointSequence adj = scan_backward(seq, inj, delta_t);
  const double bound = delta_t.norm2() + 256.0 * vmax;
  for (const Vector& d : adj.deltas) CHECK(d.norm2() <= bound);
}

TEST_CASE("structural invariants hold after init for every kind") {
  {
    TransitionHead h({HeadKind::kScaledCayley, 4, 3});
    h.init_near_identity(0.0, 0.1, 67);
    CHECK_NOTHROW(h.check_invariants());
  }
  {
    HeadConfig cfg{HeadKind::kScaledCayley, 4, 3};
    cfg.conservation = false;
    TransitionHead h(cfg);
    h.init_near_identity(0.0, 0.1, 71);
    CHECK_NOTHROW(h.check_invariants());
  }
  {
    TransitionHead h({HeadKind::kStochastic, 4, 3});
    h.init_near_identity(0.0, 0.1, 73);
    CHECK_NOTHROW(h.check_invariants());
  }
  {
    HeadConfig cfg{HeadKind::kDplr, 4, 3};
    cfg.rank = 2;
    cfg.gamma = 0.9;
    TransitionHead h(cfg);
    h.init_near_identity(0.1, 0.1, 79);
    CHECK_NOTHROW(h.check_invariants());
  }
}

TEST_CASE("degenerate and invalid inputs") {
  TransitionHead head({HeadKind::kStochastic, 3, 2});
  head.init_near_identity(0.0, 0.05, 83);
  Vector alpha = Vector::basis(3, 0);

  Trajectory tr = head.forward({}, alpha);
  CHECK(tr.states.size() == 1);
  CHECK(tr.states[0] == alpha);
  CHECK(head.backward({}, tr, {}).empty());

  CHECK_THROWS_AS(head.forward({0, 2}, alpha), InputError);
  CHECK_THROWS_AS(head.init_near_identity(0.5, 0.0, 1), InputError);
  CHECK_THROWS_AS(TransitionHead({HeadKind::kDplr, 3, 2, true, 0}), ConfigError);
}
