#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <vector>

#include "rt/common.hpp"

namespace rt {

/// Dense row-major matrix of doubles. Every public operation keeps entries
/// finite; NaN/Inf surfacing from user data is caught by check_finite().
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::initializer_list<std::initializer_list<double>> init) {
    rows_ = init.size();
    cols_ = rows_ ? init.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& row : init) {
      if (row.size() != cols_) throw ShapeError("ragged initializer");
      data_.insert(data_.end(), row.begin(), row.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double* row_ptr(std::size_t r) { return data_.data() + r * cols_; }
  const double* row_ptr(std::size_t r) const { return data_.data() + r * cols_; }
  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  Matrix& operator+=(const Matrix& o) {
    if (!same_shape(o)) throw ShapeError("operator+=: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Matrix& operator-=(const Matrix& o) {
    if (!same_shape(o)) throw ShapeError("operator-=: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Matrix& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  friend Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
  friend Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
  friend Matrix operator*(Matrix a, double s) { return a *= s; }
  friend Matrix operator*(double s, Matrix a) { return a *= s; }

  bool operator==(const Matrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Dense real vector. Kept distinct from Matrix so automaton states and
/// adjoints carry their own type.
class Vector {
 public:
  Vector() = default;
  explicit Vector(std::size_t dim, double fill = 0.0) : data_(dim, fill) {}
  Vector(std::initializer_list<double> init) : data_(init) {}

  static Vector basis(std::size_t dim, std::size_t i) {
    Vector v(dim);
    v[i] = 1.0;
    return v;
  }

  std::size_t dim() const { return data_.size(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  Vector& operator+=(const Vector& o) {
    if (dim() != o.dim()) throw ShapeError("vector +=: dim mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Vector& operator-=(const Vector& o) {
    if (dim() != o.dim()) throw ShapeError("vector -=: dim mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Vector& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }
  friend Vector operator+(Vector a, const Vector& b) { return a += b; }
  friend Vector operator-(Vector a, const Vector& b) { return a -= b; }
  friend Vector operator*(Vector a, double s) { return a *= s; }
  friend Vector operator*(double s, Vector a) { return a *= s; }

  bool operator==(const Vector& o) const { return data_ == o.data_; }

  double norm2() const {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return std::sqrt(s);
  }
  double sum() const {
    double s = 0.0;
    for (double v : data_) s += v;
    return s;
  }

 private:
  std::vector<double> data_;
};

inline double dot(const Vector& a, const Vector& b) {
  if (a.dim() != b.dim()) throw ShapeError("dot: dim mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) s += a[i] * b[i];
  return s;
}

inline bool is_finite(const Matrix& m) {
  for (double v : m.data())
    if (!std::isfinite(v)) return false;
  return true;
}

inline bool is_finite(const Vector& v) {
  for (double x : v.data())
    if (!std::isfinite(x)) return false;
  return true;
}

inline double max_abs(const Matrix& m) {
  double mx = 0.0;
  for (double v : m.data()) mx = std::max(mx, std::abs(v));
  return mx;
}

inline double frob_norm(const Matrix& m) {
  double s = 0.0;
  for (double v : m.data()) s += v * v;
  return std::sqrt(s);
}

/// Standard matrix product with a fixed left-to-right reduction over the
/// inner dimension, so identical inputs give identical bits on every run.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimension mismatch");
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* arow = a.row_ptr(i);
    double* crow = c.row_ptr(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = arow[k];
      const double* brow = b.row_ptr(k);
      for (std::size_t j = 0; j < b.cols(); ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

inline Vector matvec(const Matrix& a, const Vector& x) {
  if (a.cols() != x.dim()) throw ShapeError("matvec: dimension mismatch");
  Vector y(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* arow = a.row_ptr(i);
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) s += arow[j] * x[j];
    y[i] = s;
  }
  return y;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

inline Matrix outer(const Vector& a, const Vector& b) {
  Matrix m(a.dim(), b.dim());
  for (std::size_t i = 0; i < a.dim(); ++i)
    for (std::size_t j = 0; j < b.dim(); ++j) m(i, j) = a[i] * b[j];
  return m;
}

/// Solves a·X = b for square a (dim <= 64) by partial-pivot elimination.
inline Matrix solve_small(const Matrix& a, const Matrix& b) {
  if (a.rows() != a.cols()) throw ShapeError("solve_small: a must be square");
  if (a.rows() > 64) throw ShapeError("solve_small: dim > 64");
  if (b.rows() != a.rows()) throw ShapeError("solve_small: rhs row mismatch");
  const std::size_t n = a.rows();
  Matrix lu = a;
  Matrix x = b;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(lu(r, col)) > std::abs(lu(piv, col))) piv = r;
    if (std::abs(lu(piv, col)) < 1e-12)
      throw SingularMatrixError("solve_small: numerically singular");
    if (piv != col) {
      for (std::size_t j = 0; j < n; ++j) std::swap(lu(col, j), lu(piv, j));
      for (std::size_t j = 0; j < x.cols(); ++j) std::swap(x(col, j), x(piv, j));
    }
    const double d = lu(col, col);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = lu(r, col) / d;
      if (f == 0.0) continue;
      for (std::size_t j = col; j < n; ++j) lu(r, j) -= f * lu(col, j);
      for (std::size_t j = 0; j < x.cols(); ++j) x(r, j) -= f * x(col, j);
    }
  }
  for (std::size_t col = n; col-- > 0;) {
    const double d = lu(col, col);
    for (std::size_t j = 0; j < x.cols(); ++j) x(col, j) /= d;
    for (std::size_t r = 0; r < col; ++r) {
      const double f = lu(r, col);
      if (f == 0.0) continue;
      for (std::size_t j = 0; j < x.cols(); ++j) x(r, j) -= f * x(col, j);
    }
  }
  return x;
}

inline std::vector<double> singular_values(const Matrix& a);

/// Largest singular value via power iteration on aᵀa with a deterministic
/// all-ones start vector. Falls back to the Jacobi SVD when the top singular
/// values are too close for power iteration to separate.
inline double spectral_norm(const Matrix& a, double tol = 1e-10) {
  if (a.empty()) throw ShapeError("spectral_norm: empty matrix");
  if (tol <= 0.0) throw InputError("spectral_norm: tol must be positive");
  const std::size_t n = a.cols();
  Vector v(n, 1.0 / std::sqrt(static_cast<double>(n)));
  double sigma = 0.0;
  const Matrix at = transpose(a);
  for (int it = 0; it < 10000; ++it) {
    Vector w = matvec(at, matvec(a, v));
    const double wn = w.norm2();
    if (wn == 0.0) return 0.0;  // a annihilates the start vector; a may be 0
    w *= 1.0 / wn;
    const double next = std::sqrt(wn);
    if (it > 0 && std::abs(next - sigma) <= tol * std::max(next, 1e-300)) return next;
    sigma = next;
    v = w;
  }
  return singular_values(a).front();
}

/// Singular values by one-sided Jacobi, descending. Exact enough to serve as
/// the rank/SVD oracle for the Hankel checks.
inline std::vector<double> singular_values(const Matrix& a) {
  // Work on the transpose when rows < cols so columns are the short side.
  Matrix u = a.rows() >= a.cols() ? a : transpose(a);
  const std::size_t m = u.rows(), n = u.cols();
  const double eps = 1e-14;
  for (int sweep = 0; sweep < 60; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double app = 0.0, aqq = 0.0, apq = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          app += u(i, p) * u(i, p);
          aqq += u(i, q) * u(i, q);
          apq += u(i, p) * u(i, q);
        }
        off = std::max(off, std::abs(apq) / std::max(std::sqrt(app * aqq), 1e-300));
        if (std::abs(apq) <= eps * std::sqrt(app * aqq)) continue;
        const double tau = (aqq - app) / (2.0 * apq);
        const double t = (tau >= 0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double up = u(i, p), uq = u(i, q);
          u(i, p) = c * up - s * uq;
          u(i, q) = s * up + c * uq;
        }
      }
    }
    if (off < 1e-15) break;
  }
  std::vector<double> sv(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += u(i, j) * u(i, j);
    sv[j] = std::sqrt(s);
  }
  std::sort(sv.begin(), sv.end(), std::greater<double>());
  return sv;
}

/// Count of singular values above tol times the largest.
inline std::size_t numeric_rank(const Matrix& a, double tol) {
  if (a.empty()) throw ShapeError("numeric_rank: empty matrix");
  if (tol <= 0.0) throw InputError("numeric_rank: tol must be positive");
  const std::vector<double> sv = singular_values(a);
  if (sv.empty() || sv.front() == 0.0) return 0;
  const double cut = tol * sv.front();
  std::size_t r = 0;
  while (r < sv.size() && sv[r] > cut) ++r;
  return r;
}

}  // namespace rt
