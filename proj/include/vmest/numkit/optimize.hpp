#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "vmest/numkit/types.hpp"

namespace vmest {

struct Evaluation {
  double value;
  Vec gradient;
};

struct TraceEntry {
  int iteration;
  double criterion;
  double gradient_norm;
};

struct OptimOptions {
  double grad_tol = 1e-8;
  int max_iter = 500;
  /// Cap on the infinity norm of the first trial step.
  double initial_step_cap = 1.0;
  /// Starting inverse-Hessian approximation for the ascent direction
  /// (positive definite); identity when absent.
  std::optional<Matrix> initial_inverse_hessian;
  /// Newton only: stop as converged once half the Newton decrement
  /// g' (-H)^{-1} g is at most this.
  double decrement_tol = 0.0;
  /// Newton only: stop as converged when an accepted step gains nothing
  /// measurable and the gradient norm is at most this.
  double stall_grad_tol = 0.0;
};

struct OptimResult {
  Vec x;
  double value = -std::numeric_limits<double>::infinity();
  Vec gradient;
  int iterations = 0;
  bool converged = false;
  std::vector<TraceEntry> trace;
};

/// BFGS ascent with Armijo backtracking. `f(x)` returns value and gradient
/// and may throw vmest::Error, which the line search treats as an infeasible
/// trial point. `on_accept(x)` fires right after each accepted evaluation,
/// before any further call to `f`.
template <class F, class OnAccept>
OptimResult bfgs_maximize(F&& f, const Vec& x0, const OptimOptions& opt, OnAccept&& on_accept) {
  constexpr double kArmijo = 1e-4;
  const Eigen::Index d = x0.size();
  OptimResult res;
  res.x = x0;
  Evaluation cur = f(x0);
  if (!std::isfinite(cur.value) || !cur.gradient.allFinite()) {
    throw Error(ErrorKind::NonFiniteEvaluation, "objective is not finite at the starting point");
  }
  on_accept(res.x);
  const bool seeded = opt.initial_inverse_hessian && opt.initial_inverse_hessian->rows() == d;
  Matrix h_inv = seeded ? *opt.initial_inverse_hessian : Matrix(Matrix::Identity(d, d));
  bool fresh_h = !seeded;

  auto try_eval = [&](const Vec& x, Evaluation& out) {
    try {
      out = f(x);
      return std::isfinite(out.value) && out.gradient.allFinite();
    } catch (const Error&) {
      return false;
    }
  };

  int stalls = 0;
  for (int iter = 0;; ++iter) {
    const double gnorm = inf_norm(cur.gradient);
    res.trace.push_back({iter, cur.value, gnorm});
    res.iterations = iter;
    if (gnorm <= opt.grad_tol) {
      res.converged = true;
      break;
    }
    if (iter >= opt.max_iter) break;

    Vec dir = h_inv * cur.gradient;
    double slope = cur.gradient.dot(dir);
    if (!(slope > 0.0)) {
      h_inv.setIdentity();
      fresh_h = true;
      dir = cur.gradient;
      slope = cur.gradient.squaredNorm();
    }
    double t = 1.0;
    if (fresh_h) {
      const double dmax = inf_norm(dir);
      if (dmax > opt.initial_step_cap) t = opt.initial_step_cap / dmax;
    }
    const double slack = 8.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(cur.value));
    Evaluation trial;
    bool accepted = false;
    Vec x_new;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = res.x + t * dir;
      if (try_eval(x_new, trial) && trial.value >= cur.value + kArmijo * t * slope - slack) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      if (!fresh_h) {
        h_inv.setIdentity();
        fresh_h = true;
        continue;
      }
      break;
    }
    on_accept(x_new);
    const Vec s = x_new - res.x;
    const Vec y = cur.gradient - trial.gradient;  // ascent: curvature of -f
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (fresh_h) {
        h_inv *= sy / y.squaredNorm();
        fresh_h = false;
      }
      const double rho = 1.0 / sy;
      const Matrix eye = Matrix::Identity(d, d);
      h_inv = (eye - rho * s * y.transpose()) * h_inv * (eye - rho * y * s.transpose()) + rho * s * s.transpose();
    }
    const double progress = trial.value - cur.value;
    stalls = (std::abs(progress) <= slack && inf_norm(s) <= 1e-14 * (1.0 + inf_norm(res.x)))
                 ? stalls + 1
                 : 0;
    res.x = x_new;
    cur = trial;
    if (stalls >= 5) {
      res.trace.push_back({iter + 1, cur.value, inf_norm(cur.gradient)});
      res.iterations = iter + 1;
      res.converged = inf_norm(cur.gradient) <= opt.grad_tol;
      break;
    }
  }
  res.value = cur.value;
  res.gradient = cur.gradient;
  return res;
}

template <class F>
OptimResult bfgs_maximize(F&& f, const Vec& x0, const OptimOptions& opt) {
  return bfgs_maximize(std::forward<F>(f), x0, opt, [](const Vec&) {});
}

}  // namespace vmest

namespace vmest {

struct NewtonEvaluation {
  double value;
  Vec gradient;
  Matrix hessian;
};

/// Damped Newton ascent. Where the Hessian is not negative definite its
/// eigenvalues are reflected and floored, so the direction stays uphill.
/// Trial points where `f` throws vmest::Error are treated as infeasible.
template <class F, class OnAccept>
OptimResult newton_maximize(F&& f, const Vec& x0, const OptimOptions& opt, OnAccept&& on_accept) {
  constexpr double kArmijo = 1e-4;
  OptimResult res;
  res.x = x0;
  NewtonEvaluation cur = f(x0);
  if (!std::isfinite(cur.value) || !cur.gradient.allFinite() || !cur.hessian.allFinite()) {
    throw Error(ErrorKind::NonFiniteEvaluation, "objective is not finite at the starting point");
  }
  on_accept(res.x);
  for (int iter = 0;; ++iter) {
    const double gnorm = inf_norm(cur.gradient);
    res.trace.push_back({iter, cur.value, gnorm});
    res.iterations = iter;
    if (gnorm <= opt.grad_tol) {
      res.converged = true;
      break;
    }
    if (iter >= opt.max_iter) break;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(-0.5 * (cur.hessian + cur.hessian.transpose()));
    Vec lam = eig.eigenvalues().cwiseAbs();
    const double floor = 1e-8 * std::max(1.0, lam.maxCoeff());
    lam = lam.cwiseMax(floor);
    const Vec dir = eig.eigenvectors() * (eig.eigenvectors().transpose() * cur.gradient).cwiseQuotient(lam);
    const double slope = cur.gradient.dot(dir);
    if (opt.decrement_tol > 0.0 && 0.5 * slope <= opt.decrement_tol) {
      res.converged = true;
      break;
    }
    const double slack = 8.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(cur.value));
    double t = 1.0;
    const double dmax = inf_norm(dir);
    if (dmax > 10.0 * opt.initial_step_cap) t = 10.0 * opt.initial_step_cap / dmax;
    bool accepted = false;
    NewtonEvaluation trial;
    Vec x_new;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = res.x + t * dir;
      bool ok = false;
      try {
        trial = f(x_new);
        ok = std::isfinite(trial.value) && trial.gradient.allFinite() && trial.hessian.allFinite();
      } catch (const Error&) {
      }
      if (ok && trial.value >= cur.value + kArmijo * t * slope - slack) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;
    on_accept(x_new);
    // A step with no measurable gain near the gradient noise floor means the
    // remaining gradient is evaluation error, not distance to the optimum.
    const bool stalled = trial.value - cur.value <= slack;
    if (stalled && opt.stall_grad_tol > 0.0 && inf_norm(trial.gradient) <= opt.stall_grad_tol) {
      res.x = x_new;
      cur = trial;
      res.trace.push_back({iter + 1, cur.value, inf_norm(cur.gradient)});
      res.iterations = iter + 1;
      res.converged = true;
      break;
    }
    const bool tiny = inf_norm(x_new - res.x) <= 1e-15 * (1.0 + inf_norm(res.x));
    res.x = x_new;
    cur = trial;
    if (tiny) {
      res.trace.push_back({iter + 1, cur.value, inf_norm(cur.gradient)});
      res.iterations = iter + 1;
      res.converged = inf_norm(cur.gradient) <= opt.grad_tol;
      break;
    }
  }
  res.value = cur.value;
  res.gradient = cur.gradient;
  return res;
}

template <class F>
OptimResult newton_maximize(F&& f, const Vec& x0, const OptimOptions& opt) {
  return newton_maximize(std::forward<F>(f), x0, opt, [](const Vec&) {});
}

}  // namespace vmest
