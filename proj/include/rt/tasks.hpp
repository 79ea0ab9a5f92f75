#pragma once

#include <cstdint>
#include <ostream>
#include <vector>

#include "rt/common.hpp"

namespace rt {

enum class TaskKind { kModCount, kParity, kAddition, kBase2 };

/// One generated batch. Labels are per-position classes for the counting and
/// addition tasks; base-2 uses a single scalar target per sequence instead.
struct TaskBatch {
  TaskKind kind = TaskKind::kModCount;
  std::size_t modulus = 0;  // mod_count / parity
  std::vector<std::vector<int>> tokens;
  std::vector<std::vector<int>> labels;
  std::vector<double> scalar_targets;  // base2 only
  std::vector<std::size_t> lengths;

  std::size_t size() const { return tokens.size(); }
};

/// Uniform bits; label at position t is the count of ones in x_1..x_t mod k.
inline TaskBatch gen_mod_count(std::size_t k, std::size_t length, std::size_t n,
                               std::uint64_t seed) {
  if (k < 2) throw InputError("gen_mod_count: k must be >= 2");
  if (length == 0 || n == 0) throw InputError("gen_mod_count: empty batch");
  Rng rng(seed);
  TaskBatch b;
  b.kind = k == 2 ? TaskKind::kParity : TaskKind::kModCount;
  b.modulus = k;
  for (std::size_t e = 0; e < n; ++e) {
    std::vector<int> x(length), y(length);
    std::size_t count = 0;
    for (std::size_t t = 0; t < length; ++t) {
      x[t] = static_cast<int>(uniform_int(rng, 0, 1));
      count = (count + static_cast<std::size_t>(x[t])) % k;
      y[t] = static_cast<int>(count);
    }
    b.tokens.push_back(std::move(x));
    b.labels.push_back(std::move(y));
    b.lengths.push_back(length);
  }
  return b;
}

inline TaskBatch gen_parity(std::size_t length, std::size_t n, std::uint64_t seed) {
  return gen_mod_count(2, length, n, seed);
}

/// Digit-pair addition, least-significant digit first. Token t encodes the
/// pair (a_t, b_t) as 10*a_t + b_t; label t is the sum digit after carry
/// propagation. The final carry is consumed internally (no extra position).
inline TaskBatch gen_addition(std::size_t min_len, std::size_t max_len, std::size_t n,
                              std::uint64_t seed) {
  if (min_len < 1 || min_len > max_len) throw InputError("gen_addition: length range");
  if (n == 0) throw InputError("gen_addition: empty batch");
  Rng rng(seed);
  TaskBatch b;
  b.kind = TaskKind::kAddition;
  b.modulus = 10;
  for (std::size_t e = 0; e < n; ++e) {
    const std::size_t len = static_cast<std::size_t>(
        uniform_int(rng, static_cast<int>(min_len), static_cast<int>(max_len)));
    std::vector<int> x(len), y(len);
    int carry = 0;
    for (std::size_t t = 0; t < len; ++t) {
      const int a = static_cast<int>(uniform_int(rng, 0, 9));
      const int d = static_cast<int>(uniform_int(rng, 0, 9));
      x[t] = 10 * a + d;
      const int s = a + d + carry;
      y[t] = s % 10;
      carry = s / 10;
    }
    b.tokens.push_back(std::move(x));
    b.labels.push_back(std::move(y));
    b.lengths.push_back(len);
  }
  return b;
}

/// Uniform bits, most significant first; the scalar target is the binary
/// fraction sum x_t * 2^{-t} in [0, 1). Supervision is final-position only.
inline TaskBatch gen_base2(std::size_t length, std::size_t n, std::uint64_t seed) {
  if (length == 0 || n == 0) throw InputError("gen_base2: empty batch");
  if (length > 64) throw InputError("gen_base2: length > 64 exceeds the mantissa");
  Rng rng(seed);
  TaskBatch b;
  b.kind = TaskKind::kBase2;
  for (std::size_t e = 0; e < n; ++e) {
    std::vector<int> x(length);
    double value = 0.0;
    double scale = 0.5;
    for (std::size_t t = 0; t < length; ++t) {
      x[t] = static_cast<int>(uniform_int(rng, 0, 1));
      value += scale * x[t];
      scale *= 0.5;
    }
    b.tokens.push_back(std::move(x));
    b.scalar_targets.push_back(value);
    b.lengths.push_back(length);
  }
  return b;
}

/// One example per line: tokens, then '|', then targets.
inline void dump_batch(const TaskBatch& b, std::ostream& os) {
  for (std::size_t e = 0; e < b.size(); ++e) {
    for (std::size_t t = 0; t < b.tokens[e].size(); ++t)
      os << (t ? " " : "") << b.tokens[e][t];
    os << " |";
    if (b.kind == TaskKind::kBase2) {
      os << ' ' << b.scalar_targets[e];
    } else {
      for (int y : b.labels[e]) os << ' ' << y;
    }
    os << '\n';
  }
}

}  // namespace rt
