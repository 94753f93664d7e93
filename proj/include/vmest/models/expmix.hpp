#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "vmest/core/model.hpp"
#include "vmest/quadrature.hpp"

namespace vmest::models {

/// One observation (x1, x2) of the exponential mixture:
///   X1 ~ Exp(lambda1),  Z ~ Exp(lambda2),  X2 | Z ~ Exp(lambda1 Z).
struct ExpMixDatum {
  double x1;
  double x2;
};

/// Exponential mixture with a log-normal variational family.
///
/// theta = (log lambda1, log lambda2), psi = (mu, log sigma) for
/// q(z) = LogNormal(mu, sigma^2). With R = lambda1 x2 + lambda2 and
/// E = exp(mu + sigma^2 / 2) = E_q[Z],
///
///   v = 2 log lambda1 - lambda1 x1 + log lambda2 + 2 mu - R E + log sigma
///       + 1/2 + log(2 pi) / 2,
///
/// where the last two constants come from the log-normal entropy. The inner
/// optimum is sigma^2 = 1/2, mu = -1/4 + log(2 / R), and the profiled
/// criterion equals the marginal log-likelihood
///   2 log lambda1 + log lambda2 - lambda1 x1 - 2 log R
/// plus profiled_offset().
class ExpMix {
 public:
  using Datum = ExpMixDatum;

  explicit ExpMix(bool misspecified_generation = false, int marginal_order = 30)
      : misspecified_(misspecified_generation), marginal_rule_(gh_rule(marginal_order)) {}

  Eigen::Index dim_theta() const { return 2; }
  Eigen::Index dim_psi() const { return 2; }
  bool misspecified_generation() const { return misspecified_; }

  /// Constant difference between the profiled criterion and the marginal
  /// log-likelihood: (3/2) log 2 - 2 + log(2 pi) / 2.
  static double profiled_offset() { return 1.5 * std::numbers::ln2 - 2.0 + 0.5 * std::log(2.0 * std::numbers::pi); }

  double v(const Vec& theta, const Vec& psi, const Datum& x) const {
    const double l1 = std::exp(theta(0));
    const double l2 = std::exp(theta(1));
    const double mu = psi(0);
    const double tau = psi(1);
    const double e = std::exp(mu + 0.5 * std::exp(2.0 * tau));
    return 2.0 * theta(0) - l1 * x.x1 + theta(1) + 2.0 * mu - (l1 * x.x2 + l2) * e + tau + 0.5 +
           0.5 * std::log(2.0 * std::numbers::pi);
  }

  Vec grad_theta_v(const Vec& theta, const Vec& psi, const Datum& x) const {
    const double l1 = std::exp(theta(0));
    const double l2 = std::exp(theta(1));
    const double e = std::exp(psi(0) + 0.5 * std::exp(2.0 * psi(1)));
    Vec g(2);
    g << 2.0 - l1 * x.x1 - l1 * x.x2 * e, 1.0 - l2 * e;
    return g;
  }

  Vec grad_psi_v(const Vec& theta, const Vec& psi, const Datum& x) const {
    const double r = std::exp(theta(0)) * x.x2 + std::exp(theta(1));
    const double s2 = std::exp(2.0 * psi(1));
    const double e = std::exp(psi(0) + 0.5 * s2);
    Vec g(2);
    g << 2.0 - r * e, 1.0 - r * e * s2;
    return g;
  }

  /// Joint Hessian over (log lambda1, log lambda2, mu, log sigma).
  Matrix hessian_v(const Vec& theta, const Vec& psi, const Datum& x) const {
    const double l1 = std::exp(theta(0));
    const double l2 = std::exp(theta(1));
    const double r = l1 * x.x2 + l2;
    const double s2 = std::exp(2.0 * psi(1));
    const double e = std::exp(psi(0) + 0.5 * s2);
    Matrix h(4, 4);
    const double a1 = l1 * x.x2 * e;
    const double b1 = l2 * e;
    h << -l1 * x.x1 - a1, 0.0, -a1, -a1 * s2,
         0.0, -b1, -b1, -b1 * s2,
         -a1, -b1, -r * e, -r * e * s2,
         -a1 * s2, -b1 * s2, -r * e * s2, -r * e * s2 * (s2 + 2.0);
    return h;
  }

  Vec psi_closed_form(const Vec& theta, const Datum& x) const {
    const double r = std::exp(theta(0)) * x.x2 + std::exp(theta(1));
    Vec psi(2);
    psi << -0.25 + std::log(2.0 / r), -0.5 * std::numbers::ln2;
    return psi;
  }

  Vec psi_init(const Datum&) const { return Vec::Zero(2); }

  /// lambda1 from the mean of x1; lambda2 from the Lomax median of x2,
  /// which is lambda2 / lambda1.
  Vec theta_init(const std::vector<Datum>& data) const {
    double sum = 0.0;
    std::vector<double> x2;
    x2.reserve(data.size());
    for (const auto& d : data) {
      sum += d.x1;
      x2.push_back(d.x2);
    }
    const double l1 = static_cast<double>(data.size()) / sum;
    auto mid = x2.begin() + static_cast<std::ptrdiff_t>(x2.size() / 2);
    std::nth_element(x2.begin(), mid, x2.end());
    Vec t(2);
    t << std::log(l1), std::log(l1 * std::max(*mid, 1e-12));
    return t;
  }

  /// Draw at theta. In misspecified mode X1 ~ Gamma(3, 3 lambda1) instead of
  /// Exp(lambda1), which keeps E[X1] = 1 / lambda1.
  Datum simulate(const Vec& theta, RngStream& rng) const {
    const double l1 = std::exp(theta(0));
    const double l2 = std::exp(theta(1));
    Datum d{};
    d.x1 = misspecified_ ? rng.gamma(3.0, 3.0 * l1) : rng.exponential(l1);
    const double z = rng.exponential(l2);
    d.x2 = rng.exponential(l1 * z);
    return d;
  }

  Datum simulate(const Vec& theta, const Datum&, RngStream& rng) const { return simulate(theta, rng); }

  double marginal_loglik(const Vec& theta, const Datum& x) const {
    const double l1 = std::exp(theta(0));
    const double l2 = std::exp(theta(1));
    return 2.0 * theta(0) + theta(1) - l1 * x.x1 - 2.0 * std::log(l1 * x.x2 + l2);
  }

  Vec marginal_score(const Vec& theta, const Datum& x) const {
    const double l1 = std::exp(theta(0));
    const double l2 = std::exp(theta(1));
    const double r = l1 * x.x2 + l2;
    Vec s(2);
    s << 2.0 - l1 * x.x1 - 2.0 * l1 * x.x2 / r, 1.0 - 2.0 * l2 / r;
    return s;
  }

  /// log p_theta(x) by adaptive quadrature of the joint over u = log z.
  double marginal_loglik_quadrature(const Vec& theta, const Datum& x) const {
    return adaptive_marginal([&](double u) { return log_joint_log_latent(theta, x, u); }, marginal_rule_);
  }

  /// log p_theta(x, z = e^u) + u.
  static double log_joint_log_latent(const Vec& theta, const Datum& x, double u) {
    const double l1 = std::exp(theta(0));
    const double l2 = std::exp(theta(1));
    return 2.0 * theta(0) - l1 * x.x1 + theta(1) + 2.0 * u - (l1 * x.x2 + l2) * std::exp(u);
  }

 private:
  bool misspecified_;
  GhRule marginal_rule_;
};

}  // namespace vmest::models
