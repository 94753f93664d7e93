#pragma once

#include <cmath>
#include <limits>

#include "vmest/numkit/types.hpp"

namespace vmest {

namespace detail {

inline double fd_step_first(double x) {
  static const double h = std::cbrt(std::numeric_limits<double>::epsilon());
  return h * std::max(1.0, std::abs(x));
}

// Second differences divide by h^2, so the fourth root balances truncation
// against roundoff.
inline double fd_step_second(double x) {
  static const double h = std::sqrt(std::sqrt(std::numeric_limits<double>::epsilon()));
  return h * std::max(1.0, std::abs(x));
}

template <class F>
double checked_eval(F& f, const Vec& x, Eigen::Index coord) {
  const double y = f(x);
  if (!std::isfinite(y)) {
    throw Error(ErrorKind::NonFiniteEvaluation, "function is not finite near coordinate " + std::to_string(coord),
                static_cast<std::size_t>(coord));
  }
  return y;
}

}  // namespace detail

/// Central-difference gradient with step eps^{1/3} * max(1, |x_j|).
template <class F>
Vec grad_fd(F&& f, const Vec& x) {
  Vec g(x.size());
  Vec xp = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = detail::fd_step_first(x(j));
    xp(j) = x(j) + h;
    const double fp = detail::checked_eval(f, xp, j);
    xp(j) = x(j) - h;
    const double fm = detail::checked_eval(f, xp, j);
    xp(j) = x(j);
    g(j) = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// Symmetrized central second differences. Only the upper triangle is
/// evaluated and mirrored, so the result is exactly symmetric.
template <class F>
SymMatrix hess_fd(F&& f, const Vec& x) {
  const Eigen::Index d = x.size();
  SymMatrix h(d);
  const double f0 = detail::checked_eval(f, x, 0);
  Vec step(d);
  for (Eigen::Index j = 0; j < d; ++j) step(j) = detail::fd_step_second(x(j));
  Vec xp = x;
  for (Eigen::Index i = 0; i < d; ++i) {
    xp(i) = x(i) + step(i);
    const double fp = detail::checked_eval(f, xp, i);
    xp(i) = x(i) - step(i);
    const double fm = detail::checked_eval(f, xp, i);
    xp(i) = x(i);
    h.set(i, i, (fp - 2.0 * f0 + fm) / (step(i) * step(i)));
    for (Eigen::Index j = i + 1; j < d; ++j) {
      auto at = [&](double si, double sj) {
        xp(i) = x(i) + si * step(i);
        xp(j) = x(j) + sj * step(j);
        const double y = detail::checked_eval(f, xp, i);
        xp(i) = x(i);
        xp(j) = x(j);
        return y;
      };
      const double val = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * step(i) * step(j));
      h.set(i, j, val);
    }
  }
  return h;
}

/// Central-difference Jacobian of a vector-valued map (rows: outputs).
template <class G>
Matrix jacobian_fd(G&& g, const Vec& x) {
  const Eigen::Index d = x.size();
  Vec xp = x;
  Matrix jac;
  for (Eigen::Index j = 0; j < d; ++j) {
    const double h = detail::fd_step_first(x(j));
    xp(j) = x(j) + h;
    const Vec gp = g(xp);
    xp(j) = x(j) - h;
    const Vec gm = g(xp);
    xp(j) = x(j);
    if (j == 0) jac.resize(gp.size(), d);
    if (!gp.allFinite() || !gm.allFinite()) {
      throw Error(ErrorKind::NonFiniteEvaluation, "gradient is not finite near coordinate " + std::to_string(j),
                  static_cast<std::size_t>(j));
    }
    jac.col(j) = (gp - gm) / (2.0 * h);
  }
  return jac;
}

}  // namespace vmest
