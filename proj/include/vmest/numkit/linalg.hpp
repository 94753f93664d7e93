#pragma once

#include <array>
#include <cmath>

#include "vmest/numkit/types.hpp"

namespace vmest {

/// Relative jitter levels tried, in order, when a Cholesky factorization
/// fails: delta * mean(diag) is added to the diagonal.
inline constexpr std::array<double, 3> kJitterLevels{1e-10, 1e-8, 1e-6};

/// Cholesky factor of a positive definite matrix, escalating through the
/// jitter policy before giving up with NotPositiveDefinite.
inline Eigen::LLT<Matrix> chol_factor(const SymMatrix& m) {
  Eigen::LLT<Matrix> llt(m.matrix());
  if (llt.info() == Eigen::Success) return llt;
  const double mean_diag = m.matrix().diagonal().mean();
  const double scale = std::abs(mean_diag) > 0.0 ? std::abs(mean_diag) : 1.0;
  for (double delta : kJitterLevels) {
    Matrix jittered = m.matrix();
    jittered.diagonal().array() += delta * scale;
    llt.compute(jittered);
    if (llt.info() == Eigen::Success) return llt;
  }
  throw Error(ErrorKind::NotPositiveDefinite, "matrix is not positive definite after jitter escalation");
}

inline bool is_positive_definite(const SymMatrix& m) {
  Eigen::LLT<Matrix> llt(m.matrix());
  return llt.info() == Eigen::Success;
}

inline Vec chol_solve(const SymMatrix& m, const Vec& b) {
  if (m.dim() != b.size()) {
    throw Error(ErrorKind::InvalidInput, "chol_solve dimension mismatch");
  }
  return chol_factor(m).solve(b);
}

/// Inverse of a symmetric (not necessarily definite) matrix. Throws
/// Singular on rank deficiency; the result is exactly symmetric.
inline SymMatrix sym_inverse(const SymMatrix& m) {
  Eigen::FullPivLU<Matrix> lu(m.matrix());
  const double max_abs = m.matrix().cwiseAbs().maxCoeff();
  lu.setThreshold(1e-13);
  if (max_abs == 0.0 || !lu.isInvertible()) {
    throw Error(ErrorKind::Singular, "symmetric matrix is singular");
  }
  Matrix inv = lu.inverse();
  if (!inv.allFinite()) {
    throw Error(ErrorKind::Singular, "symmetric matrix inverse is not finite");
  }
  return SymMatrix(inv);
}

/// 1 / (Sigma^{-1})_{kk} for zero-based k: the variance a fully factorized
/// Gaussian approximation assigns to coordinate k. Evaluated through the
/// Schur complement Sigma_kk - s^T Sigma_{-k}^{-1} s, with the subtracted
/// term formed as a sum of squares, so the result never exceeds Sigma_kk.
inline double precision_diag_variance(const SymMatrix& sigma, Eigen::Index k) {
  const Eigen::Index d = sigma.dim();
  if (k < 0 || k >= d) {
    throw Error(ErrorKind::InvalidInput, "precision_diag_variance index out of range");
  }
  if (!is_positive_definite(sigma)) {
    throw Error(ErrorKind::NotPositiveDefinite, "Sigma must be positive definite");
  }
  if (d == 1) return sigma(0, 0);
  Matrix minor(d - 1, d - 1);
  Vec row(d - 1);
  for (Eigen::Index i = 0, ii = 0; i < d; ++i) {
    if (i == k) continue;
    row(ii) = sigma(k, i);
    for (Eigen::Index j = 0, jj = 0; j < d; ++j) {
      if (j == k) continue;
      minor(ii, jj) = sigma(i, j);
      ++jj;
    }
    ++ii;
  }
  Eigen::LLT<Matrix> llt(minor);
  const Vec half = llt.matrixL().solve(row);
  return sigma(k, k) - half.squaredNorm();
}

}  // namespace vmest
