#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "vmest/core/model.hpp"
#include "vmest/numkit/optimize.hpp"
#include "vmest/numkit/rng.hpp"
#include "vmest/quadrature.hpp"

namespace vmest::models {

/// One subject of a logistic random-intercept model: n_i visits, each a
/// design row and a binary response.
struct GlmmSubject {
  Matrix design;  // n_i x p
  Vec y;          // n_i entries in {0, 1}
};

namespace detail {

inline double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace detail

struct MleOptions {
  double grad_tol = 1e-8;
  int max_iter = 500;
  /// Iterates may not go below this value of log sigma^2.
  double lower_log_var = -15.0;
  /// Stop once the predicted Newton gain is below this (the quadrature
  /// noise floor of the mean log-likelihood).
  double decrement_tol = 1e-10;
  /// Quadrature noise floor of the mean score.
  double stall_grad_tol = 5e-4;
  std::optional<Vec> theta_init;
};

struct MleResult {
  Vec theta;
  double mean_loglik = 0.0;
  bool converged = false;
  int iterations = 0;
  /// The log-variance sits on the lower bound (the likelihood kept rising
  /// as sigma^2 -> 0).
  bool variance_at_boundary = false;
};

/// Logistic regression with a N(0, sigma^2) random intercept per subject,
/// fitted with a Gaussian variational approximation N(m, s^2) per subject.
///
/// theta = (beta_1..beta_p, log sigma^2), psi = (m, log s). Writing
/// eta_j = x_j' beta,
///
///   v = sum_j [ y_j (eta_j + m) - E log(1 + exp(eta_j + gamma)) ]
///       - log(sigma^2)/2 - (m^2 + s^2) / (2 sigma^2) + log s + 1/2,
///
/// with gamma ~ N(m, s^2). The Gaussian expectations use a fixed
/// Gauss-Hermite rule, and every derivative below is the exact derivative
/// of that discretized criterion.
class GlmmRi {
 public:
  using Datum = GlmmSubject;

  explicit GlmmRi(Eigen::Index n_covariates, int gva_order = 20, int marginal_order = 30)
      : p_(n_covariates), gva_rule_(gh_rule(gva_order)), marginal_rule_(gh_rule(marginal_order)) {
    if (p_ < 1) throw Error(ErrorKind::InvalidInput, "GLMM needs at least one covariate column");
  }

  Eigen::Index dim_theta() const { return p_ + 1; }
  Eigen::Index dim_psi() const { return 2; }
  Eigen::Index n_covariates() const { return p_; }
  const GhRule& gva_rule() const { return gva_rule_; }
  const GhRule& marginal_rule() const { return marginal_rule_; }

  double v(const Vec& theta, const Vec& psi, const Datum& x) const {
    const auto t = terms(theta, psi, x, Order::First);
    const double m = psi(0), s2 = std::exp(2.0 * psi(1));
    const double inv_var = std::exp(-theta(p_));
    return t.data_term - 0.5 * theta(p_) - 0.5 * (m * m + s2) * inv_var + psi(1) + 0.5;
  }

  Vec grad_theta_v(const Vec& theta, const Vec& psi, const Datum& x) const {
    const auto t = terms(theta, psi, x, Order::First);
    const double m = psi(0), s2 = std::exp(2.0 * psi(1));
    Vec g(p_ + 1);
    g.head(p_) = t.g_beta;
    g(p_) = -0.5 + 0.5 * (m * m + s2) * std::exp(-theta(p_));
    return g;
  }

  Vec grad_psi_v(const Vec& theta, const Vec& psi, const Datum& x) const {
    const auto t = terms(theta, psi, x, Order::First);
    const double m = psi(0), s = std::exp(psi(1));
    const double inv_var = std::exp(-theta(p_));
    Vec g(2);
    g << t.sum_resid - m * inv_var, -s * t.sum_pg - s * s * inv_var + 1.0;
    return g;
  }

  /// Joint Hessian over (beta, log sigma^2, m, log s).
  Matrix hessian_v(const Vec& theta, const Vec& psi, const Datum& x) const {
    const auto t = terms(theta, psi, x, Order::Full);
    const double m = psi(0), s = std::exp(psi(1)), s2 = s * s;
    const double inv_var = std::exp(-theta(p_));
    const Eigen::Index w = p_;          // log sigma^2
    const Eigen::Index im = p_ + 1;     // m
    const Eigen::Index it = p_ + 2;     // log s
    Matrix h = Matrix::Zero(p_ + 3, p_ + 3);
    h.topLeftCorner(p_, p_) = -t.h_beta;
    h.block(0, im, p_, 1) = -t.x_q;
    h.block(0, it, p_, 1) = -s * t.x_qg;
    h(w, w) = -0.5 * (m * m + s2) * inv_var;
    h(w, im) = m * inv_var;
    h(w, it) = s2 * inv_var;
    h(im, im) = -t.sum_q - inv_var;
    h(im, it) = -s * t.sum_qg;
    h(it, it) = -s * t.sum_pg - s2 * t.sum_qgg - 2.0 * s2 * inv_var;
    h.triangularView<Eigen::StrictlyLower>() = h.transpose().triangularView<Eigen::StrictlyLower>();
    return h;
  }

  Matrix hessian_psi_v(const Vec& theta, const Vec& psi, const Datum& x) const {
    const auto t = terms(theta, psi, x, Order::PsiSecond);
    const double s = std::exp(psi(1)), s2 = s * s;
    const double inv_var = std::exp(-theta(p_));
    Matrix h(2, 2);
    h(0, 0) = -t.sum_q - inv_var;
    h(0, 1) = h(1, 0) = -s * t.sum_qg;
    h(1, 1) = -s * t.sum_pg - s2 * t.sum_qgg - 2.0 * s2 * inv_var;
    return h;
  }

  Vec psi_init(const Datum&) const { return Vec::Zero(2); }

  /// beta from a pooled logistic regression (a few ridge-stabilized IRLS
  /// steps), log sigma^2 = 0.
  Vec theta_init(const std::vector<Datum>& data) const {
    Vec beta = Vec::Zero(p_);
    for (int it = 0; it < 25; ++it) {
      Matrix info = 1e-6 * Matrix::Identity(p_, p_);
      Vec score = -1e-6 * beta;
      for (const auto& s : data) {
        for (Eigen::Index j = 0; j < s.design.rows(); ++j) {
          const double pr = detail::sigmoid(s.design.row(j).dot(beta));
          score += s.design.row(j).transpose() * (s.y(j) - pr);
          info += pr * (1.0 - pr) * s.design.row(j).transpose() * s.design.row(j);
        }
      }
      const Vec step = info.ldlt().solve(score);
      if (!step.allFinite()) break;
      beta += step.cwiseMax(-5.0).cwiseMin(5.0);
      if (inf_norm(step) < 1e-8) break;
    }
    Vec t = Vec::Zero(p_ + 1);
    t.head(p_) = beta;
    return t;
  }

  /// gamma ~ N(0, sigma^2), then y_j ~ Bernoulli(logistic(x_j' beta + gamma))
  /// on the template's design.
  Datum simulate(const Vec& theta, const Datum& tmpl, RngStream& rng) const {
    const double gamma = rng.normal(0.0, std::exp(0.5 * theta(p_)));
    Datum out{tmpl.design, Vec(tmpl.design.rows())};
    for (Eigen::Index j = 0; j < tmpl.design.rows(); ++j) {
      const double pr = detail::sigmoid(tmpl.design.row(j).dot(theta.head(p_)) + gamma);
      out.y(j) = rng.bernoulli(pr) ? 1.0 : 0.0;
    }
    return out;
  }

  /// log of the integral over gamma of prod_j Bernoulli(y_j) * N(gamma; 0, sigma^2).
  double marginal_loglik(const Vec& theta, const Datum& x) const { return posterior_grid(theta, x).log_marginal; }

  /// Score as posterior expectations over the same adaptive grid:
  ///   d/d beta        = E[ sum_j x_j (y_j - p_j(gamma)) | y ]
  ///   d/d log sigma^2 = E[ gamma^2 / (2 sigma^2) - 1/2 | y ]
  Vec marginal_score(const Vec& theta, const Datum& x) const {
    return score_from_grid(theta, x, posterior_grid(theta, x));
  }

  AdaptiveGrid posterior_grid(const Vec& theta, const Datum& x) const {
    return posterior_grid(theta, x, marginal_rule_);
  }

  AdaptiveGrid posterior_grid(const Vec& theta, const Datum& x, const GhRule& rule) const {
    const Vec eta = x.design * theta.head(p_);
    const double log_var = theta(p_);
    const double inv_var = std::exp(-log_var);
    auto logjoint = [&](double g) {
      double s = -0.5 * (std::log(2.0 * std::numbers::pi) + log_var) - 0.5 * g * g * inv_var;
      for (Eigen::Index j = 0; j < eta.size(); ++j) s += x.y(j) * (eta(j) + g) - detail::softplus(eta(j) + g);
      return s;
    };
    auto d1 = [&](double g) {
      double s = -g * inv_var;
      for (Eigen::Index j = 0; j < eta.size(); ++j) s += x.y(j) - detail::sigmoid(eta(j) + g);
      return s;
    };
    auto d2 = [&](double g) {
      double s = -inv_var;
      for (Eigen::Index j = 0; j < eta.size(); ++j) {
        const double pr = detail::sigmoid(eta(j) + g);
        s -= pr * (1.0 - pr);
      }
      return s;
    };
    return adaptive_grid(logjoint, d1, d2, rule);
  }

  /// Hessian of the quadrature log-likelihood from posterior moments:
  /// E[d2 log p(y, gamma)] + Var[d log p(y, gamma)] over the adaptive grid.
  Matrix marginal_hessian(const Vec& theta, const Datum& x) const {
    return moments_from_grid(theta, x, posterior_grid(theta, x)).hessian;
  }

  /// Maximum likelihood by damped Newton on the mean quadrature
  /// log-likelihood.
  MleResult direct_mle(const std::vector<Datum>& data, const MleOptions& options = {}) const {
    if (data.empty()) throw Error(ErrorKind::InvalidInput, "direct_mle needs data");
    const double n = static_cast<double>(data.size());
    auto evaluate = [&](const Vec& theta) {
      if (theta(p_) < options.lower_log_var) {
        throw Error(ErrorKind::DomainError, "log sigma^2 below the optimization bound");
      }
      NewtonEvaluation e{0.0, Vec::Zero(theta.size()), Matrix::Zero(theta.size(), theta.size())};
      for (const auto& s : data) {
        const Moments m = moments_from_grid(theta, s, posterior_grid(theta, s));
        e.value += m.log_marginal;
        e.gradient += m.score;
        e.hessian += m.hessian;
      }
      e.value /= n;
      e.gradient /= n;
      e.hessian /= n;
      return e;
    };
    Vec start = options.theta_init ? *options.theta_init : theta_init(data);
    if (start.size() != dim_theta()) throw Error(ErrorKind::InvalidInput, "theta_init has the wrong dimension");
    start(p_) = std::max(start(p_), options.lower_log_var + 1.0);
    OptimOptions opt;
    opt.grad_tol = options.grad_tol;
    opt.max_iter = options.max_iter;
    opt.decrement_tol = options.decrement_tol;
    opt.stall_grad_tol = options.stall_grad_tol;
    OptimResult r = newton_maximize(evaluate, start, opt);
    MleResult out{r.x, r.value, r.converged, r.iterations, false};
    if (!r.converged && r.x(p_) < options.lower_log_var + 1.0) {
      // The likelihood keeps rising as sigma^2 -> 0: pin the variance.
      const double pinned = options.lower_log_var;
      auto beta_only = [&](const Vec& beta) {
        Vec theta(p_ + 1);
        theta << beta, pinned;
        const NewtonEvaluation e = evaluate(theta);
        return NewtonEvaluation{e.value, Vec(e.gradient.head(p_)), Matrix(e.hessian.topLeftCorner(p_, p_))};
      };
      OptimResult rb = newton_maximize(beta_only, Vec(r.x.head(p_)), opt);
      out.theta.head(p_) = rb.x;
      out.theta(p_) = pinned;
      out.mean_loglik = rb.value;
      out.converged = rb.converged;
      out.iterations = r.iterations + rb.iterations;
      out.variance_at_boundary = true;
    }
    if (!out.converged) {
      throw Error(ErrorKind::NoConvergence, "direct MLE did not converge (gradient norm " + std::to_string(inf_norm(r.gradient)) +
                                                " after " + std::to_string(r.iterations) + " iterations)");
    }
    return out;
  }

 private:
  struct Terms {
    double data_term = 0.0;  // sum_j y_j (eta_j + m) - E softplus
    double sum_resid = 0.0;  // sum_j (y_j - E sigmoid)
    double sum_pg = 0.0;     // sum_j E[sigmoid * g]
    Vec g_beta;              // sum_j x_j (y_j - E sigmoid)
    // Second-order pieces, filled when requested.
    double sum_q = 0.0, sum_qg = 0.0, sum_qgg = 0.0;
    Matrix h_beta;  // sum_j x_j x_j' E sigmoid'
    Vec x_q;        // sum_j x_j E sigmoid'
    Vec x_qg;       // sum_j x_j E[sigmoid' g]
  };

  enum class Order { First, PsiSecond, Full };

  Terms terms(const Vec& theta, const Vec& psi, const Datum& x, Order order) const {
    const bool second = order != Order::First;
    Terms t;
    const Eigen::Index nv = x.design.rows();
    const double m = psi(0);
    const double s = std::exp(psi(1));
    const double inv_sqrt_pi = 1.0 / std::sqrt(std::numbers::pi);
    const Vec a = (x.design * theta.head(p_)).array() + m;
    Vec resid(nv), q(nv), qg(nv);
    for (Eigen::Index j = 0; j < nv; ++j) {
      double e0 = 0.0, p = 0.0, pg = 0.0, qj = 0.0, qgj = 0.0, qggj = 0.0;
      for (int k = 0; k < gva_rule_.order; ++k) {
        const double w = gva_rule_.weights[k] * inv_sqrt_pi;
        const double g = std::numbers::sqrt2 * gva_rule_.nodes[k];
        const double z = a(j) + s * g;
        const double sig = detail::sigmoid(z);
        e0 += w * detail::softplus(z);
        p += w * sig;
        pg += w * sig * g;
        if (second) {
          const double d = sig * (1.0 - sig);
          qj += w * d;
          qgj += w * d * g;
          qggj += w * d * g * g;
        }
      }
      resid(j) = x.y(j) - p;
      t.data_term += x.y(j) * a(j) - e0;
      t.sum_pg += pg;
      if (second) {
        q(j) = qj;
        qg(j) = qgj;
        t.sum_qgg += qggj;
      }
    }
    t.sum_resid = resid.sum();
    if (order != Order::PsiSecond) t.g_beta = x.design.transpose() * resid;
    if (second) {
      t.sum_q = q.sum();
      t.sum_qg = qg.sum();
    }
    if (order == Order::Full) {
      t.h_beta = x.design.transpose() * q.asDiagonal() * x.design;
      t.x_q = x.design.transpose() * q;
      t.x_qg = x.design.transpose() * qg;
    }
    return t;
  }

  struct Moments {
    double log_marginal;
    Vec score;
    Matrix hessian;
  };

  // Per-node derivatives of log p(y, gamma) over the grid: column k holds
  // (d/d beta, d/d log sigma^2) at gamma_k.
  Matrix node_scores(const Vec& theta, const Datum& x, const AdaptiveGrid& grid, Matrix* curvature_weights) const {
    const auto nk = static_cast<Eigen::Index>(grid.points.size());
    const Vec eta = x.design * theta.head(p_);
    const double inv_var = std::exp(-theta(p_));
    Matrix resid(eta.size(), nk);
    if (curvature_weights) curvature_weights->resize(eta.size(), nk);
    Matrix d(p_ + 1, nk);
    for (Eigen::Index k = 0; k < nk; ++k) {
      const double gamma = grid.points[static_cast<std::size_t>(k)];
      for (Eigen::Index j = 0; j < eta.size(); ++j) {
        const double pr = detail::sigmoid(eta(j) + gamma);
        resid(j, k) = x.y(j) - pr;
        if (curvature_weights) (*curvature_weights)(j, k) = pr * (1.0 - pr);
      }
      d(p_, k) = 0.5 * gamma * gamma * inv_var - 0.5;
    }
    d.topRows(p_) = x.design.transpose() * resid;
    return d;
  }

  static Vec posterior_weights(const AdaptiveGrid& grid) {
    return Eigen::Map<const Vec>(grid.posterior_weights.data(), static_cast<Eigen::Index>(grid.posterior_weights.size()));
  }

  Vec score_from_grid(const Vec& theta, const Datum& x, const AdaptiveGrid& grid) const {
    return node_scores(theta, x, grid, nullptr) * posterior_weights(grid);
  }

  Moments moments_from_grid(const Vec& theta, const Datum& x, const AdaptiveGrid& grid) const {
    Matrix curv;
    const Matrix d = node_scores(theta, x, grid, &curv);
    const Vec w = posterior_weights(grid);
    const Vec mean = d * w;
    Matrix h = d * w.asDiagonal() * d.transpose() - mean * mean.transpose();
    h.topLeftCorner(p_, p_) -= x.design.transpose() * (curv * w).asDiagonal() * x.design;
    double e_gamma2 = 0.0;
    for (std::size_t k = 0; k < grid.points.size(); ++k) e_gamma2 += w(static_cast<Eigen::Index>(k)) * grid.points[k] * grid.points[k];
    h(p_, p_) -= 0.5 * e_gamma2 * std::exp(-theta(p_));
    return {grid.log_marginal, mean, 0.5 * (h + h.transpose())};
  }

  Eigen::Index p_;
  GhRule gva_rule_;
  GhRule marginal_rule_;
};

/// Column names of the synthetic sex-by-age design.
inline std::vector<std::string> synthetic_covariate_names() {
  return {"female", "female_age", "female_age2", "male", "male_age", "male_age2"};
}

struct DesignOptions {
  int visits = 6;
  int min_age = 12;
  int max_age = 35;
};

/// Synthetic longitudinal designs with the sex-specific quadratic age
/// structure: columns are 1, a, a^2 for females then for males, with
/// a = age / 35, consecutive yearly visits starting at a uniform age.
/// Responses are left at zero.
inline std::vector<GlmmSubject> synthetic_designs(std::size_t n, const DesignOptions& opt, RngStream& rng) {
  if (opt.visits < 1 || opt.max_age - opt.min_age + 1 < opt.visits) {
    throw Error(ErrorKind::InvalidInput, "visit count does not fit in the age range");
  }
  const auto span = static_cast<std::uint64_t>(opt.max_age - opt.min_age - opt.visits + 2);
  std::vector<GlmmSubject> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const bool male = rng.bernoulli(0.5);
    const int start = opt.min_age + static_cast<int>(rng.index(span));
    GlmmSubject s{Matrix::Zero(opt.visits, 6), Vec::Zero(opt.visits)};
    const int off = male ? 3 : 0;
    for (int j = 0; j < opt.visits; ++j) {
      const double a = (start + j) / 35.0;
      s.design(j, off) = 1.0;
      s.design(j, off + 1) = a;
      s.design(j, off + 2) = a * a;
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace vmest::models
