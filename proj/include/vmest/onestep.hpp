#pragma once

#include <cmath>
#include <vector>

#include "vmest/core/fit.hpp"
#include "vmest/sandwich.hpp"

namespace vmest {

enum class InformationKind {
  /// Mean outer product of per-datum scores.
  OuterProduct,
  /// Negative finite-difference Jacobian of the mean score.
  NegativeHessian,
};

struct OneStepResult {
  Vec theta_start;
  Vec score;         // S_n
  SymMatrix obs_info;  // I_n
  Vec theta_onestep;
  SymMatrix ml_cov;  // I_n^{-1} / n
  double step_norm = 0.0;
  std::size_t n = 0;
  double loglik_start = 0.0;    // mean marginal log-likelihood at theta_start
  double loglik_onestep = 0.0;  // ... and at theta_onestep
};

/// D_theta log p_theta(x): analytic when the model provides it, otherwise
/// central differences of marginal_loglik with step 1e-5 * max(1, |theta_k|).
template <class M>
  requires VariationalModel<M> && HasMarginalLoglik<M>
Vec marginal_score(const M& model, const Vec& theta, const typename M::Datum& x) {
  Vec s;
  if constexpr (HasMarginalScore<M>) {
    s = model.marginal_score(theta, x);
  } else {
    s.resize(theta.size());
    Vec tp = theta;
    for (Eigen::Index k = 0; k < theta.size(); ++k) {
      const double h = 1e-5 * std::max(1.0, std::abs(theta(k)));
      tp(k) = theta(k) + h;
      const double up = model.marginal_loglik(tp, x);
      tp(k) = theta(k) - h;
      const double down = model.marginal_loglik(tp, x);
      tp(k) = theta(k);
      s(k) = (up - down) / (2.0 * h);
    }
  }
  if (!s.allFinite()) throw Error(ErrorKind::NonFiniteEvaluation, "marginal score is not finite");
  return s;
}

template <class M>
  requires VariationalModel<M> && HasMarginalLoglik<M>
Vec mean_marginal_score(const M& model, const Vec& theta, const Dataset<typename M::Datum>& data,
                        unsigned workers = 1) {
  std::vector<Vec> scores(data.n());
  parallel_for(data.n(), workers, [&](std::size_t i) { scores[i] = marginal_score(model, theta, data[i]); });
  Vec s = Vec::Zero(theta.size());
  for (const auto& si : scores) s += si;
  return s / static_cast<double>(data.n());
}

template <class M>
  requires VariationalModel<M> && HasMarginalLoglik<M>
double mean_marginal_loglik(const M& model, const Vec& theta, const Dataset<typename M::Datum>& data,
                            unsigned workers = 1) {
  std::vector<double> ll(data.n());
  parallel_for(data.n(), workers, [&](std::size_t i) { ll[i] = model.marginal_loglik(theta, data[i]); });
  double sum = 0.0;
  for (double v : ll) sum += v;
  return sum / static_cast<double>(data.n());
}

/// S_n = mean score; I_n = mean outer product of scores (or the negative
/// Hessian variant).
template <class M>
  requires VariationalModel<M> && HasMarginalLoglik<M>
std::pair<Vec, SymMatrix> score_and_info(const M& model, const Vec& theta, const Dataset<typename M::Datum>& data,
                                         InformationKind kind = InformationKind::OuterProduct, unsigned workers = 1) {
  const std::size_t n = data.n();
  std::vector<Vec> scores(n);
  parallel_for(n, workers, [&](std::size_t i) {
    try {
      scores[i] = marginal_score(model, theta, data[i]);
    } catch (const Error& e) {
      throw e.with_index(i, "datum");
    }
  });
  Vec s = Vec::Zero(theta.size());
  Matrix opg = Matrix::Zero(theta.size(), theta.size());
  for (const auto& si : scores) {
    s += si;
    opg.noalias() += si * si.transpose();
  }
  s /= static_cast<double>(n);
  opg /= static_cast<double>(n);
  if (kind == InformationKind::OuterProduct) return {s, SymMatrix(opg)};
  const Matrix jac = jacobian_fd([&](const Vec& t) { return mean_marginal_score(model, t, data, workers); }, theta);
  return {s, SymMatrix(Matrix(-jac))};
}

inline Vec one_step_update(const Vec& theta, const Vec& score, const SymMatrix& info) {
  try {
    return theta + sym_inverse(info).matrix() * score;
  } catch (const Error&) {
    throw Error(ErrorKind::InfoSingular, "observed information is singular");
  }
}

/// theta1 = theta-hat + I_n^{-1} S_n: one Newton ascent step on the
/// marginal log-likelihood from the variational estimate.
template <class M>
  requires VariationalModel<M> && HasMarginalLoglik<M>
OneStepResult one_step(const M& model, const Vec& theta_start, const Dataset<typename M::Datum>& data,
                       InformationKind kind = InformationKind::OuterProduct, unsigned workers = 1) {
  if (theta_start.size() != model.dim_theta()) throw Error(ErrorKind::InvalidInput, "theta dimension mismatch");
  auto [score, info] = score_and_info(model, theta_start, data, kind, workers);
  OneStepResult r;
  r.theta_start = theta_start;
  r.n = data.n();
  r.theta_onestep = one_step_update(theta_start, score, info);
  r.score = std::move(score);
  r.ml_cov = (1.0 / static_cast<double>(data.n())) * sym_inverse(info);
  r.obs_info = std::move(info);
  r.step_norm = (r.theta_onestep - r.theta_start).norm();
  r.loglik_start = mean_marginal_loglik(model, theta_start, data, workers);
  r.loglik_onestep = mean_marginal_loglik(model, r.theta_onestep, data, workers);
  return r;
}

template <class M>
  requires VariationalModel<M> && HasMarginalLoglik<M>
OneStepResult one_step(const M& model, const FitResult& fit, const Dataset<typename M::Datum>& data,
                       InformationKind kind = InformationKind::OuterProduct, unsigned workers = 1) {
  return one_step(model, fit.theta_hat, data, kind, workers);
}

/// theta1_k +/- z * sqrt((I_n^{-1})_kk / n).
inline std::vector<Interval> ml_wald_intervals(const OneStepResult& r, double level) {
  const double z = z_critical(level);
  std::vector<Interval> out;
  for (Eigen::Index k = 0; k < r.theta_onestep.size(); ++k) {
    const double var = r.ml_cov(k, k);
    if (!(var > 0.0)) throw Error(ErrorKind::InfoSingular, "non-positive ML variance", static_cast<std::size_t>(k));
    const double half = z * std::sqrt(var);
    out.push_back({r.theta_onestep(k) - half, r.theta_onestep(k) + half});
  }
  return out;
}

}  // namespace vmest
