#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "vmest/core/profile.hpp"
#include "vmest/numkit/parallel.hpp"

namespace vmest {

struct FitResult {
  Vec theta_hat;
  std::vector<Vec> psi_hat;
  double criterion_value = -std::numeric_limits<double>::infinity();
  bool converged = false;
  std::vector<TraceEntry> trace;
  FitConfig config_echo;
  int start_index = 0;
};

namespace detail {

template <VariationalModel M>
struct ProfiledState {
  double value;
  Vec gradient;
  std::vector<Vec> psi;
};

// Profiles every datum at theta (warm-started from `warm`) and returns the
// mean criterion with its envelope gradient. Sums run in index order.
template <VariationalModel M>
ProfiledState<M> profile_all(const M& model, const Vec& theta, const Dataset<typename M::Datum>& data,
                             const FitConfig& config, const std::vector<Vec>& warm) {
  const std::size_t n = data.n();
  ProfiledState<M> st{0.0, Vec::Zero(theta.size()), std::vector<Vec>(n)};
  std::vector<double> values(n);
  std::vector<Vec> grads(n);
  parallel_for(n, config.workers, [&](std::size_t i) {
    try {
      st.psi[i] = profile_psi(model, theta, data[i], config, warm[i]);
      values[i] = model.v(theta, st.psi[i], data[i]);
      grads[i] = grad_theta(model, theta, st.psi[i], data[i]);
    } catch (const Error& e) {
      throw e.with_index(i, "datum");
    }
  });
  for (std::size_t i = 0; i < n; ++i) {
    st.value += values[i];
    st.gradient += grads[i];
  }
  st.value /= static_cast<double>(n);
  st.gradient /= static_cast<double>(n);
  return st;
}

template <VariationalModel M>
double mean_criterion(const M& model, const Vec& theta, const std::vector<Vec>& psi,
                      const Dataset<typename M::Datum>& data) {
  double sum = 0.0;
  for (std::size_t i = 0; i < data.n(); ++i) sum += model.v(theta, psi[i], data[i]);
  return sum / static_cast<double>(data.n());
}

template <VariationalModel M>
FitResult fit_newton(const M& model, const Dataset<typename M::Datum>& data, const FitConfig& config,
                     const Vec& theta0, std::vector<Vec> psi0) {
  std::vector<Vec> accepted = std::move(psi0);
  std::vector<Vec> pending;
  auto objective = [&](const Vec& theta) {
    auto st = profile_all(model, theta, data, config, accepted);
    Matrix a = Matrix::Zero(theta.size(), theta.size());
    for (std::size_t i = 0; i < data.n(); ++i) a += profiled_hessian(model, theta, st.psi[i], data[i]).matrix();
    a /= static_cast<double>(data.n());
    pending = std::move(st.psi);
    return NewtonEvaluation{st.value, st.gradient, a};
  };
  auto on_accept = [&](const Vec&) { accepted = pending; };
  OptimOptions opt;
  opt.grad_tol = config.outer_tol;
  opt.max_iter = config.max_outer_iter;
  const OptimResult r = newton_maximize(objective, theta0, opt, on_accept);
  FitResult out;
  out.theta_hat = r.x;
  out.psi_hat = std::move(accepted);
  out.converged = r.converged;
  out.trace = r.trace;
  return out;
}

template <VariationalModel M>
FitResult fit_quasi_newton(const M& model, const Dataset<typename M::Datum>& data, const FitConfig& config,
                           const Vec& theta0, std::vector<Vec> psi0) {
  std::vector<Vec> accepted = std::move(psi0);
  std::vector<Vec> pending;
  OptimOptions opt;
  opt.grad_tol = config.outer_tol;
  opt.max_iter = config.max_outer_iter;
  // Scale the first quasi-Newton steps with the profiled Hessian at the start.
  try {
    auto st = profile_all(model, theta0, data, config, accepted);
    Matrix a = Matrix::Zero(theta0.size(), theta0.size());
    for (std::size_t i = 0; i < data.n(); ++i) a += profiled_hessian(model, theta0, st.psi[i], data[i]).matrix();
    a /= static_cast<double>(data.n());
    Eigen::LLT<Matrix> llt(-a);
    if (llt.info() == Eigen::Success) {
      Matrix inv = llt.solve(Matrix::Identity(a.rows(), a.cols()));
      if (inv.allFinite()) opt.initial_inverse_hessian = 0.5 * (inv + inv.transpose());
    }
    accepted = std::move(st.psi);
  } catch (const Error&) {
  }
  auto objective = [&](const Vec& theta) {
    auto st = profile_all(model, theta, data, config, accepted);
    pending = std::move(st.psi);
    return Evaluation{st.value, st.gradient};
  };
  auto on_accept = [&](const Vec&) { accepted = pending; };
  const OptimResult r = bfgs_maximize(objective, theta0, opt, on_accept);
  FitResult out;
  out.theta_hat = r.x;
  out.psi_hat = std::move(accepted);
  out.converged = r.converged;
  out.trace = r.trace;
  return out;
}

// Variational EM: alternate a full psi-step (profile every datum) with a
// theta-step that ascends the criterion for fixed psi. Both half-steps only
// accept increases, so the trace is non-decreasing.
template <VariationalModel M>
FitResult fit_alternating(const M& model, const Dataset<typename M::Datum>& data, const FitConfig& config,
                          const Vec& theta0, std::vector<Vec> psi0) {
  FitResult out;
  Vec theta = theta0;
  std::vector<Vec> psi = std::move(psi0);
  int half_step = 0;
  for (int it = 0; it < config.max_outer_iter; ++it) {
    auto st = profile_all(model, theta, data, config, psi);
    psi = std::move(st.psi);
    const double gnorm = inf_norm(st.gradient);
    out.trace.push_back({half_step++, st.value, gnorm});
    if (gnorm <= config.outer_tol) {
      out.converged = true;
      break;
    }
    auto theta_objective = [&](const Vec& t) {
      double value = 0.0;
      Vec grad = Vec::Zero(t.size());
      for (std::size_t i = 0; i < data.n(); ++i) {
        value += model.v(t, psi[i], data[i]);
        grad += grad_theta(model, t, psi[i], data[i]);
      }
      const double n = static_cast<double>(data.n());
      return Evaluation{value / n, grad / n};
    };
    OptimOptions opt;
    opt.grad_tol = 0.1 * config.outer_tol;
    opt.max_iter = 50;
    const OptimResult r = bfgs_maximize(theta_objective, theta, opt);
    theta = r.x;
    out.trace.push_back({half_step++, r.value, inf_norm(r.gradient)});
  }
  out.theta_hat = theta;
  out.psi_hat = std::move(psi);
  return out;
}

}  // namespace detail

/// Variational estimate: theta-hat maximizing M_n(theta) = mean of the
/// profiled criterion, best of `multistart_count` starts. Start 0 is the
/// unperturbed initial value; later starts add N(0, jitter_sd^2) noise to
/// every theta and psi coordinate.
template <VariationalModel M>
FitResult fit_variational(const M& model, const Dataset<typename M::Datum>& data, const FitConfig& config) {
  config.validate();
  if (data.n() < static_cast<std::size_t>(model.dim_theta())) {
    throw Error(ErrorKind::PreconditionFailed, "need at least dim_theta data points");
  }
  Vec theta_base;
  if (config.theta_init) {
    theta_base = *config.theta_init;
  } else if constexpr (HasThetaInit<M, typename M::Datum>) {
    theta_base = model.theta_init(data.data());
  } else {
    theta_base = Vec::Zero(model.dim_theta());
  }
  if (theta_base.size() != model.dim_theta()) {
    throw Error(ErrorKind::InvalidInput, "theta_init has the wrong dimension");
  }

  const RngStream base_stream(config.seed, config.stream);
  std::optional<FitResult> best;
  std::optional<Error> first_error;
  for (int s = 0; s < config.multistart_count; ++s) {
    Vec theta0 = theta_base;
    std::vector<Vec> psi0(data.n());
    for (std::size_t i = 0; i < data.n(); ++i) psi0[i] = model.psi_init(data[i]);
    if (s > 0) {
      RngStream rng = base_stream.child(static_cast<std::uint64_t>(s));
      for (Eigen::Index j = 0; j < theta0.size(); ++j) theta0(j) += rng.normal(0.0, config.jitter_sd);
      for (auto& p : psi0) {
        for (Eigen::Index j = 0; j < p.size(); ++j) p(j) += rng.normal(0.0, config.jitter_sd);
      }
    }
    try {
      FitResult r;
      switch (config.mode) {
        case FitMode::QuasiNewton: r = detail::fit_quasi_newton(model, data, config, theta0, std::move(psi0)); break;
        case FitMode::Newton: r = detail::fit_newton(model, data, config, theta0, std::move(psi0)); break;
        case FitMode::Alternating: r = detail::fit_alternating(model, data, config, theta0, std::move(psi0)); break;
      }
      if (!r.converged) continue;
      r.criterion_value = detail::mean_criterion(model, r.theta_hat, r.psi_hat, data);
      r.start_index = s;
      if (!best || r.criterion_value > best->criterion_value + 1e-10) best = std::move(r);
    } catch (const Error& e) {
      if (!first_error) first_error = e;
    }
  }
  if (!best) {
    if (config.multistart_count == 1 && first_error) throw *first_error;
    std::string detail = first_error ? std::string(" (first failure: ") + first_error->what() + ")" : "";
    throw Error(ErrorKind::NoConvergedStart, "no start converged" + detail);
  }
  best->config_echo = config;
  return *best;
}

}  // namespace vmest
