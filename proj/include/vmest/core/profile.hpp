#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>

#include <Eigen/Eigenvalues>

#include "vmest/core/model.hpp"
#include "vmest/numkit/linalg.hpp"
#include "vmest/numkit/optimize.hpp"

namespace vmest {

/// Outer optimizer: BFGS on envelope gradients, Newton with the
/// block-formula Hessian of the profiled criterion, or alternating VEM.
enum class FitMode { QuasiNewton, Newton, Alternating };

struct FitConfig {
  double inner_tol = 1e-10;  // on the infinity norm of D_psi v
  double outer_tol = 1e-8;   // on the infinity norm of D_theta M_n
  int max_inner_iter = 200;
  int max_outer_iter = 500;
  int multistart_count = 5;
  /// Multistart jitter stream is RngStream(seed, stream).
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  double jitter_sd = 0.5;
  FitMode mode = FitMode::QuasiNewton;
  /// Threads used for per-datum profiling inside one fit.
  unsigned workers = 1;
  std::optional<Vec> theta_init;

  void validate() const {
    if (!(inner_tol > 0.0) || !(outer_tol > 0.0)) {
      throw Error(ErrorKind::InvalidInput, "fit tolerances must be positive");
    }
    if (max_inner_iter < 1 || max_outer_iter < 1 || multistart_count < 1) {
      throw Error(ErrorKind::InvalidInput, "iteration limits and multistart_count must be positive");
    }
  }
};

namespace detail {

// Ascent direction from gradient g and Hessian h: Newton when h is negative
// definite, otherwise Newton on |h| with eigenvalues floored away from zero.
inline Vec inner_direction(const Vec& g, const Matrix& h) {
  Eigen::LLT<Matrix> llt(-h);
  if (llt.info() == Eigen::Success) return llt.solve(g);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (h + h.transpose()));
  const Vec& lambda = eig.eigenvalues();
  const double floor = std::max(1e-8, 1e-6 * lambda.cwiseAbs().maxCoeff());
  Vec coeff = eig.eigenvectors().transpose() * g;
  for (Eigen::Index i = 0; i < coeff.size(); ++i) coeff(i) /= std::max(std::abs(lambda(i)), floor);
  return eig.eigenvectors() * coeff;
}

}  // namespace detail

/// psi-hat(theta; x) = argmax_psi v(theta, psi; x) by safeguarded Newton
/// with backtracking, or the model's closed form when it has one.
template <VariationalModel M>
Vec profile_psi(const M& model, const Vec& theta, const typename M::Datum& x, const FitConfig& config,
                const std::optional<Vec>& warm_start = std::nullopt) {
  if constexpr (HasPsiClosedForm<M>) {
    (void)config;
    (void)warm_start;
    return model.psi_closed_form(theta, x);
  } else {
    constexpr double kArmijo = 1e-4;
    constexpr double kMaxStep = 5.0;
    Vec psi = warm_start ? *warm_start : Vec(model.psi_init(x));
    if (psi.size() != model.dim_psi()) {
      throw Error(ErrorKind::InvalidInput, "warm start has the wrong dimension");
    }
    double value = model.v(theta, psi, x);
    if (!std::isfinite(value)) {
      throw Error(ErrorKind::NonFiniteEvaluation, "criterion not finite at the inner starting point");
    }
    for (int it = 0; it < config.max_inner_iter; ++it) {
      const Vec g = grad_psi(model, theta, psi, x);
      if (!g.allFinite()) throw Error(ErrorKind::NonFiniteEvaluation, "inner gradient not finite");
      const Matrix h = psi_hessian(model, theta, psi, x);
      if (inf_norm(g) <= config.inner_tol) {
        if (!is_positive_definite(SymMatrix(Matrix(-h)))) {
          throw Error(ErrorKind::SaddleDetected, "inner stationary point is not a strict maximum");
        }
        return psi;
      }
      Vec dir = detail::inner_direction(g, h);
      double slope = g.dot(dir);
      if (!(slope > 0.0) || !dir.allFinite()) {
        dir = g;
        slope = g.squaredNorm();
      }
      const double dmax = inf_norm(dir);
      double t = dmax > kMaxStep ? kMaxStep / dmax : 1.0;
      const double slack = 8.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(value));
      bool accepted = false;
      for (int ls = 0; ls < 60; ++ls) {
        const Vec trial = psi + t * dir;
        const double tv = model.v(theta, trial, x);
        if (std::isfinite(tv) && tv >= value + kArmijo * t * slope - slack) {
          psi = trial;
          value = tv;
          accepted = true;
          break;
        }
        t *= 0.5;
      }
      if (!accepted) {
        throw Error(ErrorKind::InnerDivergence, "inner line search failed to make progress");
      }
    }
    throw Error(ErrorKind::InnerDivergence, "inner optimization exceeded max_inner_iter");
  }
}

/// m(theta; x) = sup_psi v(theta, psi; x).
template <VariationalModel M>
double profiled_criterion(const M& model, const Vec& theta, const typename M::Datum& x, const FitConfig& config,
                          const std::optional<Vec>& warm_start = std::nullopt) {
  return model.v(theta, profile_psi(model, theta, x, config, warm_start), x);
}

/// Per-datum Hessian of the profiled criterion via the block identity
///   D2 m = H_tt - H_tp H_pp^{-1} H_tp^T   at psi-hat.
template <VariationalModel M>
SymMatrix profiled_hessian(const M& model, const Vec& theta, const Vec& psi, const typename M::Datum& x) {
  const Eigen::Index d = theta.size();
  const Eigen::Index k = psi.size();
  const SymMatrix h = joint_hessian(model, theta, psi, x);
  const Matrix h_tt = h.matrix().topLeftCorner(d, d);
  if (k == 0) return SymMatrix(h_tt);
  const Matrix h_tp = h.matrix().topRightCorner(d, k);
  // H_pp is negative definite at an inner maximum; factor its negation.
  const auto llt = chol_factor(SymMatrix(Matrix(-h.matrix().bottomRightCorner(k, k))));
  return SymMatrix(Matrix(h_tt + h_tp * llt.solve(h_tp.transpose())));
}

}  // namespace vmest
