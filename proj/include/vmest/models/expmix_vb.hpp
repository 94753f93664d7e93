#pragma once

#include <cmath>
#include <span>
#include <vector>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include "vmest/models/expmix.hpp"
#include "vmest/numkit/distributions.hpp"
#include "vmest/sandwich.hpp"

namespace vmest::models {

struct GammaParams {
  double shape;
  double rate;

  double mean() const { return shape / rate; }
  double mean_log() const { return boost::math::digamma(shape) - std::log(rate); }
  double var_log() const { return boost::math::trigamma(shape); }
  double entropy() const {
    return shape - std::log(rate) + std::lgamma(shape) + (1.0 - shape) * boost::math::digamma(shape);
  }
  /// E_q[log Gamma(x; prior)] for x ~ q = this.
  double expected_log_density(const GammaParams& prior) const {
    return prior.shape * std::log(prior.rate) - std::lgamma(prior.shape) + (prior.shape - 1.0) * mean_log() -
           prior.rate * mean();
  }
};

struct VbPrior {
  GammaParams lambda1{0.01, 0.01};
  GammaParams lambda2{0.01, 0.01};
};

/// Mean-field posterior q(lambda1) q(lambda2) prod_i q(z_i), all Gamma.
struct VbPosterior {
  GammaParams lambda1;
  GammaParams lambda2;
  std::vector<GammaParams> z;
  std::vector<double> elbo_trace;
  bool converged = false;

  /// Equal-tailed credible intervals on the lambda scale.
  std::vector<Interval> credible_intervals(double level) const {
    const double lo = 0.5 * (1.0 - level);
    const double hi = 1.0 - lo;
    std::vector<Interval> out;
    for (const auto& g : {lambda1, lambda2}) {
      const GammaDist dist{g.shape, g.rate};
      out.push_back({quantile(dist, lo), quantile(dist, hi)});
    }
    return out;
  }

  /// Joint region test on the log scale: the mean-field Gaussian ellipse
  /// sum_k (log lambda_k - E log lambda_k)^2 / Var log lambda_k <= chi2_2(level).
  bool joint_region_covers(const Vec& log_lambda, double level) const {
    const double q = quantile(ChiSquared{2.0}, level);
    double stat = 0.0;
    const GammaParams g[2] = {lambda1, lambda2};
    for (int k = 0; k < 2; ++k) {
      const double diff = log_lambda(k) - g[k].mean_log();
      stat += diff * diff / g[k].var_log();
    }
    return stat <= q;
  }
};

namespace detail {

inline double vb_elbo(std::span<const ExpMixDatum> data, const VbPrior& prior, const VbPosterior& q) {
  const double el1 = q.lambda1.mean(), el2 = q.lambda2.mean();
  const double ell1 = q.lambda1.mean_log(), ell2 = q.lambda2.mean_log();
  double elbo = q.lambda1.expected_log_density(prior.lambda1) + q.lambda2.expected_log_density(prior.lambda2) +
                q.lambda1.entropy() + q.lambda2.entropy();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& x = data[i];
    const auto& qz = q.z[i];
    elbo += 2.0 * ell1 - el1 * x.x1 + qz.mean_log() + ell2 - (el1 * x.x2 + el2) * qz.mean() + qz.entropy();
  }
  return elbo;
}

}  // namespace detail

/// Coordinate-ascent variational Bayes for the exponential mixture with
/// Gamma priors on both rates. Conjugate updates:
///   q(z_i)     = Gamma(2, E[lambda1] x2_i + E[lambda2])
///   q(lambda1) = Gamma(2n + a1, b1 + sum x1_i + sum E[z_i] x2_i)
///   q(lambda2) = Gamma(n + a2, b2 + sum E[z_i])
/// Runs until the ELBO gain drops below `tol` relative, or `iters` sweeps.
inline VbPosterior fit_vb(std::span<const ExpMixDatum> data, const VbPrior& prior, int iters, double tol = 1e-12) {
  if (iters < 1) throw Error(ErrorKind::InvalidInput, "VB needs at least one iteration");
  for (const auto& g : {prior.lambda1, prior.lambda2}) {
    if (!(g.shape > 0.0 && g.rate > 0.0)) throw Error(ErrorKind::InvalidInput, "prior parameters must be positive");
  }
  const std::size_t n = data.size();
  VbPosterior q;
  q.z.assign(n, GammaParams{2.0, 1.0});
  double sum_x1 = 0.0;
  for (const auto& x : data) sum_x1 += x.x1;
  if (n > 0) {
    // Start from a moment-matched lambda so the first z-update is sensible.
    std::vector<ExpMixDatum> copy(data.begin(), data.end());
    const Vec t0 = ExpMix().theta_init(copy);
    const double nn = static_cast<double>(n);
    q.lambda1 = {2.0 * nn + prior.lambda1.shape, (2.0 * nn + prior.lambda1.shape) / std::exp(t0(0))};
    q.lambda2 = {nn + prior.lambda2.shape, (nn + prior.lambda2.shape) / std::exp(t0(1))};
  } else {
    q.lambda1 = prior.lambda1;
    q.lambda2 = prior.lambda2;
  }
  for (int it = 0; it < iters; ++it) {
    const double el1 = q.lambda1.mean(), el2 = q.lambda2.mean();
    double sum_zx2 = 0.0, sum_z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      q.z[i] = {2.0, el1 * data[i].x2 + el2};
      sum_zx2 += q.z[i].mean() * data[i].x2;
      sum_z += q.z[i].mean();
    }
    const double nn = static_cast<double>(n);
    q.lambda1 = {2.0 * nn + prior.lambda1.shape, prior.lambda1.rate + sum_x1 + sum_zx2};
    q.lambda2 = {nn + prior.lambda2.shape, prior.lambda2.rate + sum_z};
    const double elbo = detail::vb_elbo(data, prior, q);
    if (!q.elbo_trace.empty()) {
      const double prev = q.elbo_trace.back();
      if (elbo < prev - 1e-8 * std::max(1.0, std::abs(prev))) {
        throw Error(ErrorKind::NonIncreasingElbo, "CAVI sweep decreased the ELBO");
      }
      q.elbo_trace.push_back(elbo);
      if (elbo - prev <= tol * std::max(1.0, std::abs(prev))) {
        q.converged = true;
        break;
      }
    } else {
      q.elbo_trace.push_back(elbo);
    }
  }
  return q;
}

}  // namespace vmest::models
