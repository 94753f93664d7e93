#pragma once

#include <cmath>
#include <cstddef>
#include <iostream>
#include <utility>
#include <vector>

#include "vmest/core/fit.hpp"
#include "vmest/numkit/distributions.hpp"

namespace vmest {

/// Plug-in sandwich covariance V = A^{-1} B A^{-1}. The covariance of
/// theta-hat itself is v_hat / n.
struct SandwichEstimate {
  SymMatrix a_hat;
  SymMatrix b_hat;
  SymMatrix v_hat;
  std::size_t n = 0;
  Vec theta_at;
};

struct SandwichOptions {
  /// Drop datums whose psi-psi Hessian cannot be inverted, up to 1% of the
  /// sample, instead of aborting.
  bool tolerant = false;
};

struct Interval {
  double lo;
  double hi;
};

/// A-hat = mean over datums of the block-formula Hessian of m.
template <VariationalModel M>
SymMatrix a_hat(const M& model, const FitResult& fit, const Dataset<typename M::Datum>& data,
                const SandwichOptions& options = {}, unsigned workers = 1) {
  const std::size_t n = data.n();
  std::vector<std::optional<SymMatrix>> parts(n);
  parallel_for(n, workers, [&](std::size_t i) {
    try {
      parts[i] = profiled_hessian(model, fit.theta_hat, fit.psi_hat[i], data[i]);
    } catch (const Error& e) {
      if (!options.tolerant) {
        throw Error(ErrorKind::InnerHessianSingular, std::string("datum ") + std::to_string(i) + ": " + e.what(), i);
      }
    }
  });
  Matrix sum = Matrix::Zero(fit.theta_hat.size(), fit.theta_hat.size());
  std::size_t used = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (parts[i]) {
      sum += parts[i]->matrix();
      ++used;
    }
  }
  const std::size_t dropped = n - used;
  if (dropped > 0) {
    if (static_cast<double>(dropped) > 0.01 * static_cast<double>(n)) {
      throw Error(ErrorKind::InnerHessianSingular,
                  std::to_string(dropped) + " datums with singular inner Hessians exceeds the 1% allowance");
    }
    std::cerr << "warning: a_hat dropped " << dropped << " datum(s) with singular inner Hessians\n";
  }
  return SymMatrix(Matrix(sum / static_cast<double>(used)));
}

/// B-hat = mean outer product of the envelope gradients D_theta v at psi-hat.
template <VariationalModel M>
SymMatrix b_hat(const M& model, const FitResult& fit, const Dataset<typename M::Datum>& data, unsigned workers = 1) {
  const std::size_t n = data.n();
  std::vector<Vec> grads(n);
  parallel_for(n, workers, [&](std::size_t i) { grads[i] = grad_theta(model, fit.theta_hat, fit.psi_hat[i], data[i]); });
  Matrix sum = Matrix::Zero(fit.theta_hat.size(), fit.theta_hat.size());
  for (const auto& g : grads) sum.noalias() += g * g.transpose();
  return SymMatrix(Matrix(sum / static_cast<double>(n)));
}

inline SandwichEstimate sandwich_from_parts(SymMatrix a, SymMatrix b, std::size_t n, Vec theta) {
  SymMatrix a_inv = [&] {
    try {
      return sym_inverse(a);
    } catch (const Error&) {
      throw Error(ErrorKind::AHatSingular, "A-hat is singular");
    }
  }();
  SymMatrix v(Matrix(a_inv.matrix() * b.matrix() * a_inv.matrix()));
  return SandwichEstimate{std::move(a), std::move(b), std::move(v), n, std::move(theta)};
}

template <VariationalModel M>
SandwichEstimate sandwich_cov(const M& model, const FitResult& fit, const Dataset<typename M::Datum>& data,
                              const SandwichOptions& options = {}, unsigned workers = 1) {
  return sandwich_from_parts(a_hat(model, fit, data, options, workers), b_hat(model, fit, data, workers), data.n(),
                             fit.theta_hat);
}

/// Marginal Wald intervals theta_k +/- z * sqrt(V_kk / n).
inline std::vector<Interval> wald_intervals(const Vec& theta, const SymMatrix& v, std::size_t n, double level) {
  const double z = z_critical(level);
  std::vector<Interval> out;
  out.reserve(theta.size());
  for (Eigen::Index k = 0; k < theta.size(); ++k) {
    const double var = v(k, k);
    if (!(var >= 0.0)) {
      throw Error(ErrorKind::NegativeVariance, "negative variance for component " + std::to_string(k),
                  static_cast<std::size_t>(k));
    }
    const double half = z * std::sqrt(var / static_cast<double>(n));
    out.push_back({theta(k) - half, theta(k) + half});
  }
  return out;
}

inline std::vector<Interval> wald_intervals(const SandwichEstimate& est, double level) {
  return wald_intervals(est.theta_at, est.v_hat, est.n, level);
}

struct WaldTest {
  double statistic;
  bool reject;
};

/// n (theta - theta0)^T V^{-1} (theta - theta0) against chi^2_d at `level`.
inline WaldTest wald_joint_test(const Vec& theta, const SymMatrix& v, std::size_t n, const Vec& theta0, double level) {
  if (theta0.size() != theta.size()) throw Error(ErrorKind::InvalidInput, "theta0 dimension mismatch");
  if (!(level > 0.0 && level < 1.0)) throw Error(ErrorKind::DomainError, "level must lie in (0, 1)");
  const Vec diff = theta - theta0;
  double stat = 0.0;
  if (diff.squaredNorm() > 0.0) {
    Eigen::LDLT<Matrix> ldlt(v.matrix());
    const Vec piv = ldlt.vectorD().cwiseAbs();
    if (ldlt.info() != Eigen::Success || !(piv.minCoeff() > 1e-14 * piv.maxCoeff())) {
      throw Error(ErrorKind::VHatSingular, "V-hat is singular");
    }
    stat = static_cast<double>(n) * diff.dot(ldlt.solve(diff));
  }
  stat = std::max(stat, 0.0);
  const double cutoff = quantile(ChiSquared{static_cast<double>(theta.size())}, level);
  return {stat, stat > cutoff};
}

inline WaldTest wald_joint_test(const SandwichEstimate& est, const Vec& theta0, double level) {
  return wald_joint_test(est.theta_at, est.v_hat, est.n, theta0, level);
}

}  // namespace vmest
