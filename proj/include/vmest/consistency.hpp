#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "vmest/core/fit.hpp"
#include "vmest/numkit/distributions.hpp"

namespace vmest {

struct TestResult {
  double statistic;
  double p_value;
};

struct HotellingResult {
  double t2;
  double f;
  double p_value;
};

enum class Verdict { NoEvidenceOfInconsistency, InconsistentJoint, InconsistentComponents };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::NoEvidenceOfInconsistency: return "no_evidence_of_inconsistency";
    case Verdict::InconsistentJoint: return "inconsistent_joint";
    case Verdict::InconsistentComponents: return "inconsistent_components";
  }
  return "unknown";
}

inline constexpr const char* kConsistencyCaveat =
    "a zero mean gradient at theta_star is necessary but not sufficient for consistency";

struct ConsistencyReport {
  Vec theta_star;
  std::size_t b = 0;
  Matrix gradients;  // b x d
  Vec column_means;
  std::vector<TestResult> marginal_t;
  HotellingResult hotelling{};
  double alpha = 0.01;
  Verdict verdict = Verdict::NoEvidenceOfInconsistency;
  /// Components flagged by the marginal tests (zero-based).
  std::vector<Eigen::Index> flagged_components;
  std::string caveat = kConsistencyCaveat;
};

/// One-sample t-test of a zero mean for every column of G, two-sided,
/// Student t with b - 1 degrees of freedom. No multiplicity adjustment.
inline std::vector<TestResult> marginal_t_tests(const Matrix& g) {
  const Eigen::Index b = g.rows();
  if (b < 2) throw Error(ErrorKind::PreconditionFailed, "marginal t-tests need at least two rows");
  std::vector<TestResult> out;
  for (Eigen::Index j = 0; j < g.cols(); ++j) {
    const double mean = g.col(j).mean();
    const double ss = (g.col(j).array() - mean).square().sum();
    const double sd = std::sqrt(ss / static_cast<double>(b - 1));
    if (sd == 0.0) {
      if (mean == 0.0) {
        out.push_back({0.0, 1.0});
        continue;
      }
      throw Error(ErrorKind::ZeroVariance, "column " + std::to_string(j) + " has zero variance",
                  static_cast<std::size_t>(j));
    }
    const double t = mean / (sd / std::sqrt(static_cast<double>(b)));
    const double p = 2.0 * sf(StudentT{static_cast<double>(b - 1)}, std::abs(t));
    out.push_back({t, std::min(1.0, p)});
  }
  return out;
}

/// Hotelling T^2 = b * mean^T S^{-1} mean with S the sample covariance;
/// F = T^2 (b - d) / (d (b - 1)) is referred to F(d, b - d).
inline HotellingResult hotelling_t2(const Matrix& g) {
  const Eigen::Index b = g.rows();
  const Eigen::Index d = g.cols();
  if (b <= d) throw Error(ErrorKind::PreconditionFailed, "Hotelling T^2 needs more rows than columns");
  const Vec mean = g.colwise().mean();
  if (mean.squaredNorm() == 0.0) return {0.0, 0.0, 1.0};
  const Matrix centered = g.rowwise() - mean.transpose();
  const Matrix s = centered.transpose() * centered / static_cast<double>(b - 1);
  Eigen::LDLT<Matrix> ldlt(s);
  const Vec piv = ldlt.vectorD();
  if (ldlt.info() != Eigen::Success || !(piv.minCoeff() > 1e-14 * piv.cwiseAbs().maxCoeff())) {
    throw Error(ErrorKind::SingularSampleCovariance, "sample covariance of the gradients is singular");
  }
  const double t2 = static_cast<double>(b) * mean.dot(ldlt.solve(mean));
  const double f = t2 * static_cast<double>(b - d) / (static_cast<double>(d) * static_cast<double>(b - 1));
  const double p = sf(FDist{static_cast<double>(d), static_cast<double>(b - d)}, f);
  return {t2, f, p};
}

/// Simulate b replicate datums at theta_star (each against a template datum
/// drawn with replacement), profile psi at theta_star and record the
/// envelope gradient D_theta v. Replicate j uses rng.child(j).
template <class M>
  requires VariationalModel<M> && Simulable<M>
Matrix consistency_gradients(const M& model, const Vec& theta_star, const Dataset<typename M::Datum>& tmpl,
                             std::size_t b, const RngStream& rng, const FitConfig& config) {
  const Eigen::Index d = model.dim_theta();
  if (b < static_cast<std::size_t>(d) + 1) {
    throw Error(ErrorKind::PreconditionFailed, "need at least dim_theta + 1 replicates");
  }
  if (theta_star.size() != d) throw Error(ErrorKind::InvalidInput, "theta_star has the wrong dimension");
  Matrix g(static_cast<Eigen::Index>(b), d);
  parallel_for(b, config.workers, [&](std::size_t j) {
    RngStream stream = rng.child(j);
    const auto& base = tmpl[static_cast<std::size_t>(stream.index(tmpl.n()))];
    const auto x = model.simulate(theta_star, base, stream);
    try {
      const Vec psi = profile_psi(model, theta_star, x, config);
      g.row(static_cast<Eigen::Index>(j)) = grad_theta(model, theta_star, psi, x).transpose();
    } catch (const Error& e) {
      throw e.with_index(j, "replicate");
    }
  });
  return g;
}

/// Verdict: inconsistent_joint iff the Hotelling p-value is below alpha;
/// otherwise inconsistent_components when some marginal p-value falls below
/// alpha / d; otherwise no evidence of inconsistency.
inline ConsistencyReport consistency_report(const Vec& theta_star, Matrix gradients, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorKind::DomainError, "alpha must lie in (0, 1)");
  ConsistencyReport r;
  r.theta_star = theta_star;
  r.b = static_cast<std::size_t>(gradients.rows());
  r.column_means = gradients.colwise().mean();
  r.marginal_t = marginal_t_tests(gradients);
  r.hotelling = hotelling_t2(gradients);
  r.alpha = alpha;
  const double d = static_cast<double>(gradients.cols());
  for (Eigen::Index j = 0; j < gradients.cols(); ++j) {
    if (r.marginal_t[j].p_value < alpha / d) r.flagged_components.push_back(j);
  }
  if (r.hotelling.p_value < alpha) {
    r.verdict = Verdict::InconsistentJoint;
  } else if (!r.flagged_components.empty()) {
    r.verdict = Verdict::InconsistentComponents;
  } else {
    r.verdict = Verdict::NoEvidenceOfInconsistency;
  }
  r.gradients = std::move(gradients);
  return r;
}

template <class M>
  requires VariationalModel<M> && Simulable<M>
ConsistencyReport assess_consistency(const M& model, const Vec& theta_star, const Dataset<typename M::Datum>& tmpl,
                                     std::size_t b, double alpha, const RngStream& rng, const FitConfig& config) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorKind::DomainError, "alpha must lie in (0, 1)");
  return consistency_report(theta_star, consistency_gradients(model, theta_star, tmpl, b, rng, config), alpha);
}

}  // namespace vmest
