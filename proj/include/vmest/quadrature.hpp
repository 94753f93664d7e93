#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include <Eigen/Eigenvalues>

#include "vmest/error.hpp"
#include "vmest/numkit/types.hpp"

namespace vmest {

/// Physicists' Gauss-Hermite rule: integrates p(t) e^{-t^2} exactly for
/// polynomials of degree up to 2*order - 1.
struct GhRule {
  int order = 0;
  std::vector<double> nodes;
  std::vector<double> weights;
};

namespace detail {

// Orthonormal Hermite recurrence at t: returns (p_n(t), p_{n-1}(t)) and the
// Christoffel sum of p_k(t)^2 for k < n.
struct HermiteEval {
  double pn;
  double pn1;
  double christoffel;
};

inline HermiteEval orthonormal_hermite(int n, double t) {
  double p_prev = 0.0;
  double p = std::pow(std::numbers::pi, -0.25);
  double sum = 0.0;
  for (int k = 0; k < n; ++k) {
    sum += p * p;
    const double next = std::sqrt(2.0 / (k + 1)) * t * p - std::sqrt(static_cast<double>(k) / (k + 1)) * p_prev;
    p_prev = p;
    p = next;
  }
  return {p, p_prev, sum};
}

}  // namespace detail

/// Golub-Welsch eigen-decomposition of the Jacobi matrix, then each node is
/// polished by Newton steps on the orthonormal recurrence and weighted by
/// the Christoffel function.
inline GhRule gh_rule(int order) {
  if (order < 1 || order > 100) {
    throw Error(ErrorKind::OrderOutOfRange, "Gauss-Hermite order must lie in [1, 100]");
  }
  GhRule rule;
  rule.order = order;
  if (order == 1) {
    rule.nodes = {0.0};
    rule.weights = {std::sqrt(std::numbers::pi)};
    return rule;
  }
  Matrix jacobi = Matrix::Zero(order, order);
  for (int k = 1; k < order; ++k) {
    jacobi(k, k - 1) = jacobi(k - 1, k) = std::sqrt(k / 2.0);
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(jacobi, Eigen::EigenvaluesOnly);
  std::vector<double> nodes(eig.eigenvalues().data(), eig.eigenvalues().data() + order);
  std::sort(nodes.begin(), nodes.end());
  for (double& t : nodes) {
    for (int it = 0; it < 8; ++it) {
      const auto h = detail::orthonormal_hermite(order, t);
      const double deriv = std::sqrt(2.0 * order) * h.pn1;
      const double step = h.pn / deriv;
      t -= step;
      if (std::abs(step) <= 1e-16 * std::max(1.0, std::abs(t))) break;
    }
  }
  rule.nodes.resize(order);
  rule.weights.resize(order);
  for (int i = 0; i < order; ++i) {
    const double t = 0.5 * (nodes[i] - nodes[order - 1 - i]);
    rule.nodes[i] = t;
  }
  if (order % 2 == 1) rule.nodes[order / 2] = 0.0;
  for (int i = 0; i < order; ++i) {
    rule.weights[i] = 1.0 / detail::orthonormal_hermite(order, rule.nodes[i]).christoffel;
  }
  for (int i = 0; i < order / 2; ++i) {
    const double w = 0.5 * (rule.weights[i] + rule.weights[order - 1 - i]);
    rule.weights[i] = rule.weights[order - 1 - i] = w;
  }
  return rule;
}

/// E[f(Z)] for Z ~ N(mean, sd^2).
template <class F>
double gauss_expect(const GhRule& rule, F&& f, double mean, double sd) {
  if (!(sd > 0.0)) throw Error(ErrorKind::DomainError, "gauss_expect requires sd > 0");
  double sum = 0.0;
  const double scale = std::numbers::sqrt2 * sd;
  for (int i = 0; i < rule.order; ++i) {
    const double y = f(mean + scale * rule.nodes[i]);
    if (!std::isfinite(y)) {
      throw Error(ErrorKind::NonFiniteEvaluation, "integrand not finite at a quadrature node",
                  static_cast<std::size_t>(i));
    }
    sum += rule.weights[i] * y;
  }
  return sum / std::sqrt(std::numbers::pi);
}

/// Recentered quadrature grid for a one-dimensional log-joint: the mode,
/// the Laplace scale, the transformed points, and normalized posterior
/// weights (which sum to one).
struct AdaptiveGrid {
  double log_marginal = 0.0;
  double mode = 0.0;
  double scale = 1.0;
  std::vector<double> points;
  std::vector<double> posterior_weights;
};

namespace detail {

/// Safeguarded Newton on the derivative of a concave-near-the-mode log
/// density, with bisection on a bracket grown geometrically from [-10, 10].
template <class D1, class D2>
double find_mode(D1&& d1, D2&& d2) {
  constexpr int kMaxIter = 100;
  double lo = -10.0, hi = 10.0;
  double dlo = d1(lo), dhi = d1(hi);
  for (int grow = 0; grow < 60 && !(dlo > 0.0 && dhi < 0.0); ++grow) {
    if (!(dlo > 0.0)) {
      lo *= 2.0;
      dlo = d1(lo);
    }
    if (!(dhi < 0.0)) {
      hi *= 2.0;
      dhi = d1(hi);
    }
    if (!std::isfinite(dlo) || !std::isfinite(dhi)) break;
  }
  if (!(dlo > 0.0 && dhi < 0.0)) {
    throw Error(ErrorKind::ModeSearchFailed, "no sign change of the log-joint derivative found");
  }
  double z = std::clamp(0.0, lo, hi);
  for (int it = 0; it < kMaxIter; ++it) {
    const double g = d1(z);
    if (g == 0.0) return z;
    if (g > 0.0) {
      lo = z;
    } else {
      hi = z;
    }
    const double c = d2(z);
    double next = (c < 0.0 && std::isfinite(c)) ? z - g / c : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - z) <= 1e-12 * (1.0 + std::abs(z)) || hi - lo <= 1e-14 * (1.0 + std::abs(z))) return next;
    z = next;
  }
  throw Error(ErrorKind::ModeSearchFailed, "mode search did not converge in 100 iterations");
}

}  // namespace detail

/// Adaptive Gauss-Hermite integration of exp(logjoint) with user-supplied
/// first and second derivatives of the log-joint.
template <class F, class D1, class D2>
AdaptiveGrid adaptive_grid(F&& logjoint, D1&& d1, D2&& d2, const GhRule& rule) {
  AdaptiveGrid grid;
  grid.mode = detail::find_mode(d1, d2);
  const double curvature = d2(grid.mode);
  if (!(curvature < 0.0) || !std::isfinite(curvature)) {
    throw Error(ErrorKind::CurvatureNotNegative, "log-joint curvature at the mode is not negative");
  }
  grid.scale = 1.0 / std::sqrt(-curvature);
  const double spread = std::numbers::sqrt2 * grid.scale;
  grid.points.resize(rule.order);
  std::vector<double> logs(rule.order);
  double max_log = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < rule.order; ++i) {
    const double t = rule.nodes[i];
    grid.points[i] = grid.mode + spread * t;
    const double lj = logjoint(grid.points[i]);
    if (std::isnan(lj)) {
      throw Error(ErrorKind::QuadratureFailed, "log-joint is NaN at a quadrature node", static_cast<std::size_t>(i));
    }
    logs[i] = std::log(rule.weights[i]) + t * t + lj;
    max_log = std::max(max_log, logs[i]);
  }
  if (!std::isfinite(max_log)) {
    throw Error(ErrorKind::QuadratureFailed, "log-joint is not finite on the quadrature grid");
  }
  double sum = 0.0;
  grid.posterior_weights.resize(rule.order);
  for (int i = 0; i < rule.order; ++i) {
    grid.posterior_weights[i] = std::exp(logs[i] - max_log);
    sum += grid.posterior_weights[i];
  }
  for (double& w : grid.posterior_weights) w /= sum;
  grid.log_marginal = max_log + std::log(sum) + std::log(spread);
  return grid;
}

/// log of the integral of exp(logjoint(z)) dz over the real line, with the
/// derivatives needed for recentering taken by finite differences.
template <class F>
double adaptive_marginal(F&& logjoint, const GhRule& rule) {
  auto d1 = [&](double z) {
    const double h = 6.0554544523933395e-06 * std::max(1.0, std::abs(z));
    return (logjoint(z + h) - logjoint(z - h)) / (2.0 * h);
  };
  auto d2 = [&](double z) {
    const double h = 1.2207031250000000e-04 * std::max(1.0, std::abs(z));
    return (logjoint(z + h) - 2.0 * logjoint(z) + logjoint(z - h)) / (h * h);
  };
  return adaptive_grid(logjoint, d1, d2, rule).log_marginal;
}

}  // namespace vmest
