#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "vmest/error.hpp"

namespace vmest {

using Vec = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline bool all_finite(const Vec& v) { return v.allFinite(); }

inline double inf_norm(const Vec& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

/// Dense symmetric matrix. Symmetry holds by construction: the matrix
/// constructor averages with the transpose and `set` writes both halves.
class SymMatrix {
 public:
  SymMatrix() = default;

  explicit SymMatrix(Eigen::Index dim) : m_(Matrix::Zero(dim, dim)) {}

  explicit SymMatrix(const Matrix& m) {
    if (m.rows() != m.cols()) {
      throw Error(ErrorKind::InvalidInput, "SymMatrix requires a square matrix");
    }
    if (!m.allFinite()) {
      throw Error(ErrorKind::NonFiniteEvaluation, "SymMatrix entries must be finite");
    }
    m_ = 0.5 * (m + m.transpose());
  }

  static SymMatrix identity(Eigen::Index dim) { return SymMatrix(Matrix(Matrix::Identity(dim, dim))); }

  static SymMatrix diagonal(const Vec& d) { return SymMatrix(Matrix(d.asDiagonal())); }

  Eigen::Index dim() const { return m_.rows(); }

  double operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }

  void set(Eigen::Index i, Eigen::Index j, double value) {
    m_(i, j) = value;
    m_(j, i) = value;
  }

  const Matrix& matrix() const { return m_; }

  SymMatrix operator-() const { return SymMatrix(Matrix(-m_)); }

  SymMatrix& operator+=(const SymMatrix& o) {
    m_ += o.m_;
    return *this;
  }

  SymMatrix& operator*=(double s) {
    m_ *= s;
    return *this;
  }

 private:
  Matrix m_;
};

inline SymMatrix operator*(double s, SymMatrix m) {
  m *= s;
  return m;
}

inline SymMatrix outer(const Vec& g) { return SymMatrix(Matrix(g * g.transpose())); }

}  // namespace vmest
