#pragma once

#include <cmath>
#include <cstddef>

#include "rt/matrix.hpp"

// Elementwise / row-wise kernels shared by the tape forward pass and the
// no-grad evaluation path. Keeping one implementation of each guarantees the
// two paths are bit-identical.

namespace rt {

inline Matrix relu(const Matrix& x) {
  Matrix y = x;
  for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
  return y;
}

inline Matrix sigmoid(const Matrix& x) {
  Matrix y = x;
  for (double& v : y.data()) v = 1.0 / (1.0 + std::exp(-v));
  return y;
}

/// Row-wise softmax. With causal=true, entries j > i of row i are masked out
/// (zero probability), which is the causal attention mask for square scores.
inline Matrix softmax_rows(const Matrix& x, bool causal = false) {
  if (causal && x.rows() != x.cols()) throw ShapeError("softmax_rows: causal needs square");
  Matrix y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const std::size_t limit = causal ? i + 1 : x.cols();
    double mx = x(i, 0);
    for (std::size_t j = 1; j < limit; ++j) mx = std::max(mx, x(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < limit; ++j) {
      y(i, j) = std::exp(x(i, j) - mx);
      sum += y(i, j);
    }
    for (std::size_t j = 0; j < limit; ++j) y(i, j) /= sum;
  }
  return y;
}

/// Column-wise softmax (column-stochastic output).
inline Matrix softmax_cols(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (std::size_t j = 0; j < x.cols(); ++j) {
    double mx = x(0, j);
    for (std::size_t i = 1; i < x.rows(); ++i) mx = std::max(mx, x(i, j));
    double sum = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
      y(i, j) = std::exp(x(i, j) - mx);
      sum += y(i, j);
    }
    for (std::size_t i = 0; i < x.rows(); ++i) y(i, j) /= sum;
  }
  return y;
}

constexpr double kLayerNormEps = 1e-5;

/// Row-wise layer norm with learned gain/bias (both 1 x d). Also returns the
/// normalized activations when xhat_out is non-null (needed for backward).
inline Matrix layernorm_rows(const Matrix& x, const Matrix& gain, const Matrix& bias,
                             Matrix* xhat_out = nullptr) {
  if (gain.rows() != 1 || gain.cols() != x.cols() || bias.rows() != 1 ||
      bias.cols() != x.cols())
    throw ShapeError("layernorm_rows: gain/bias must be 1 x cols");
  Matrix y(x.rows(), x.cols());
  Matrix xhat(x.rows(), x.cols());
  const double inv_d = 1.0 / static_cast<double>(x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) mean += x(i, j);
    mean *= inv_d;
    double var = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      const double c = x(i, j) - mean;
      var += c * c;
    }
    var *= inv_d;
    const double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t j = 0; j < x.cols(); ++j) {
      xhat(i, j) = (x(i, j) - mean) * inv_std;
      y(i, j) = gain(0, j) * xhat(i, j) + bias(0, j);
    }
  }
  if (xhat_out) *xhat_out = std::move(xhat);
  return y;
}

}  // namespace rt
