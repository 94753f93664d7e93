#include <gtest/gtest.h>

#include <cmath>

#include "vmest/models/expmix.hpp"
#include "vmest/models/glmm_ri.hpp"
#include "vmest/onestep.hpp"

using namespace vmest;

namespace {

Vec vec(std::initializer_list<double> xs) {
  Vec v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

// Gaussian location with unit variance; the score comes from finite differences.
struct GaussStub {
  using Datum = double;
  Eigen::Index dim_theta() const { return 1; }
  Eigen::Index dim_psi() const { return 1; }
  double v(const Vec& t, const Vec& p, double x) const { return -0.5 * (x - t(0)) * (x - t(0)) - 0.5 * p(0) * p(0); }
  Vec psi_init(double) const { return Vec::Zero(1); }
  double marginal_loglik(const Vec& t, double x) const { return -0.5 * (x - t(0)) * (x - t(0)); }
};

// The exponential mixture with theta stored as (log lambda2, log lambda1).
struct SwappedExpMix {
  using Datum = models::ExpMixDatum;
  models::ExpMix base;
  static Vec swap(const Vec& t) { return vec({t(1), t(0)}); }
  Eigen::Index dim_theta() const { return 2; }
  Eigen::Index dim_psi() const { return 2; }
  double v(const Vec& t, const Vec& p, const Datum& x) const { return base.v(swap(t), p, x); }
  Vec psi_init(const Datum& x) const { return base.psi_init(x); }
  double marginal_loglik(const Vec& t, const Datum& x) const { return base.marginal_loglik(swap(t), x); }
  Vec marginal_score(const Vec& t, const Datum& x) const { return swap(base.marginal_score(swap(t), x)); }
};

Dataset<models::ExpMixDatum> expmix_data(const Vec& theta, std::size_t n, std::uint64_t seed) {
  const models::ExpMix model;
  RngStream rng(seed, 0);
  std::vector<models::ExpMixDatum> d;
  for (std::size_t i = 0; i < n; ++i) d.push_back(model.simulate(theta, rng));
  return Dataset(std::move(d), "sim");
}

Vec expmix_mle(const Dataset<models::ExpMixDatum>& data) {
  const models::ExpMix m;
  OptimOptions opt;
  opt.grad_tol = 1e-12;
  const auto r = bfgs_maximize(
      [&](const Vec& t) {
        return Evaluation{mean_marginal_loglik(m, t, data), mean_marginal_score(m, t, data)};
      },
      vec({0.0, 0.0}), opt);
  EXPECT_TRUE(r.converged);
  return r.x;
}

const Vec kGlmmTruth = [] {
  Vec t(7);
  t << 0.4, 12.0, -10.0, 0.8, 12.0, -10.0, std::log(25.0);
  return t;
}();

}  // namespace

TEST(MarginalScore, ExpMixHandValue) {
  const Vec s = marginal_score(models::ExpMix{}, vec({0, 0}), models::ExpMixDatum{1.0, 1.0});
  EXPECT_NEAR(s(0), 0.0, 1e-14);
  EXPECT_NEAR(s(1), 0.0, 1e-14);
}

TEST(MarginalScore, FiniteDifferenceFallback) {
  const GaussStub m;
  for (double x : {-2.0, 0.3, 5.0}) {
    EXPECT_NEAR(marginal_score(m, vec({0.7}), x)(0), x - 0.7, 1e-8);
  }
}

TEST(MarginalScore, ExpMixAnalyticMatchesFd) {
  const models::ExpMix m;
  RngStream rng(71, 0);
  for (int k = 0; k < 50; ++k) {
    const Vec th = vec({rng.normal(), rng.normal()});
    const models::ExpMixDatum x{rng.exponential(1.0), rng.exponential(1.0)};
    const Vec fd = grad_fd([&](const Vec& t) { return m.marginal_loglik(t, x); }, th);
    EXPECT_LE(inf_norm(fd - m.marginal_score(th, x)), 1e-7);
  }
}

TEST(MarginalScore, AveragesToZeroAtTruth) {
  const Vec truth = vec({0.3, -0.2});
  const auto data = expmix_data(truth, 500, 72);
  const models::ExpMix m;
  Matrix s(500, 2);
  for (std::size_t i = 0; i < 500; ++i) s.row(i) = m.marginal_score(truth, data[i]).transpose();
  for (int j = 0; j < 2; ++j) {
    const double mean = s.col(j).mean();
    const double sd = std::sqrt((s.col(j).array() - mean).square().sum() / 499.0);
    EXPECT_LE(std::abs(mean), 4.0 * sd / std::sqrt(500.0));
  }
}

TEST(MarginalScore, GlmmMatchesRefinedOracle) {
  RngStream rng(73, 0);
  const models::GlmmRi m(6, 20, 30);
  const models::GlmmRi fine(6, 20, 60);
  Vec th = kGlmmTruth;
  th(6) = std::log(4.0);
  for (const auto& d : models::synthetic_designs(10, {}, rng)) {
    const auto s = m.simulate(th, d, rng);
    // Refinement oracle: twice the order and a smaller central-difference step.
    Vec oracle(7);
    for (int k = 0; k < 7; ++k) {
      const double h = 2e-6 * std::max(1.0, std::abs(th(k)));
      Vec up = th, dn = th;
      up(k) += h;
      dn(k) -= h;
      oracle(k) = (fine.marginal_loglik(up, s) - fine.marginal_loglik(dn, s)) / (2.0 * h);
    }
    EXPECT_LE(inf_norm(m.marginal_score(th, s) - oracle), 1e-4);
  }
}

TEST(ScoreAndInfo, TwoDatums) {
  const Dataset<double> data({1.0, -1.0}, "stub");
  const auto [s, info] = score_and_info(GaussStub{}, vec({0.0}), data);
  EXPECT_NEAR(s(0), 0.0, 1e-9);
  EXPECT_NEAR(info(0, 0), 1.0, 1e-8);
  const auto [s2, hess] = score_and_info(GaussStub{}, vec({0.0}), data, InformationKind::NegativeHessian);
  EXPECT_NEAR(hess(0, 0), 1.0, 1e-5);
}

TEST(ScoreAndInfo, SingleDatumAtOwnMle) {
  const Dataset<double> one({2.5}, "one");
  EXPECT_NEAR(score_and_info(GaussStub{}, vec({2.5}), one).first(0), 0.0, 1e-10);
}

TEST(ScoreAndInfo, ExpMixVanishesAtVariationalEstimate) {
  const auto data = expmix_data(vec({0.0, 0.0}), 2000, 74);
  const models::ExpMix m;
  FitConfig c;
  c.multistart_count = 1;
  c.outer_tol = 1e-10;
  const FitResult f = fit_variational(m, data, c);
  EXPECT_LE(inf_norm(score_and_info(m, f.theta_hat, data).first), 1e-5);
}

TEST(ScoreAndInfo, OuterProductNearMinusAHat) {
  const Vec truth = vec({0.0, 0.0});
  const auto data = expmix_data(truth, 20000, 75);
  const models::ExpMix m;
  const SymMatrix info = score_and_info(m, truth, data).second;
  FitResult at_truth;
  at_truth.theta_hat = truth;
  for (const auto& x : data.data()) at_truth.psi_hat.push_back(m.psi_closed_form(truth, x));
  const SymMatrix a = a_hat(m, at_truth, data);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) EXPECT_NEAR(info(i, j), -a(i, j), 0.1 * std::abs(a(i, j))) << i << j;
  }
}

TEST(OneStep, UpdateArithmetic) {
  EXPECT_EQ(one_step_update(vec({1.0, -2.0}), Vec::Zero(2), SymMatrix::identity(2)), vec({1.0, -2.0}));
  EXPECT_NEAR(one_step_update(vec({1.0}), vec({0.5}), SymMatrix::diagonal(vec({2.0})))(0), 1.25, 1e-15);
  try {
    one_step_update(vec({1.0}), vec({0.5}), SymMatrix(1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InfoSingular);
  }
}

TEST(OneStep, ResultInvariants) {
  const auto data = expmix_data(vec({0.2, 0.1}), 400, 76);
  const models::ExpMix m;
  const OneStepResult r = one_step(m, vec({0.5, -0.3}), data);
  const Vec expect = r.theta_start + r.obs_info.matrix().inverse() * r.score;
  EXPECT_LE(inf_norm(r.theta_onestep - expect), 1e-10);
  EXPECT_NEAR(r.step_norm, (r.theta_onestep - r.theta_start).norm(), 1e-15);
  EXPECT_TRUE(is_positive_definite(r.obs_info));
  EXPECT_LE((r.ml_cov.matrix() - r.obs_info.matrix().inverse() / 400.0).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_GE(r.loglik_onestep, r.loglik_start - 1e-8);
}

TEST(OneStep, IdempotentAtExpMixMle) {
  const auto data = expmix_data(vec({0.0, 0.0}), 1000, 77);
  const OneStepResult r = one_step(models::ExpMix{}, expmix_mle(data), data);
  EXPECT_LE(r.step_norm, 1e-4);
}

TEST(OneStep, IdempotentAtGlmmMle) {
  RngStream rng(78, 0);
  const models::GlmmRi m(6, 20, 100);
  std::vector<models::GlmmSubject> subjects;
  for (const auto& d : models::synthetic_designs(300, {}, rng)) subjects.push_back(m.simulate(kGlmmTruth, d, rng));
  const Dataset data(subjects, "sim");
  const models::MleResult mle = m.direct_mle(subjects);
  ASSERT_TRUE(mle.converged);
  const OneStepResult r = one_step(m, mle.theta, data);
  EXPECT_LE(r.step_norm, 1e-4);
}

TEST(OneStep, GlmmStepFromVariationalEstimateIncreasesLikelihood) {
  RngStream rng(79, 0);
  const models::GlmmRi m(6, 20, 100);
  std::vector<models::GlmmSubject> subjects;
  for (const auto& d : models::synthetic_designs(300, {}, rng)) subjects.push_back(m.simulate(kGlmmTruth, d, rng));
  const Dataset data(subjects, "sim");
  FitConfig c;
  c.multistart_count = 1;
  c.mode = FitMode::Newton;
  const FitResult f = fit_variational(m, data, c);
  const OneStepResult r = one_step(m, f, data);
  EXPECT_GE(r.loglik_onestep, r.loglik_start - 1e-8);
  // The step pulls the biased log sigma^2 upward.
  EXPECT_GT(r.theta_onestep(6), f.theta_hat(6));
}

TEST(OneStep, CoordinateSwapEquivariance) {
  const auto data = expmix_data(vec({0.4, -0.6}), 300, 80);
  const Vec th = vec({0.1, 0.2});
  const OneStepResult a = one_step(models::ExpMix{}, th, data);
  const OneStepResult b = one_step(SwappedExpMix{}, SwappedExpMix::swap(th), data);
  EXPECT_LE(inf_norm(b.score - SwappedExpMix::swap(a.score)), 1e-14);
  EXPECT_NEAR(b.obs_info(0, 0), a.obs_info(1, 1), 1e-14);
  EXPECT_NEAR(b.obs_info(0, 1), a.obs_info(0, 1), 1e-14);
  EXPECT_LE(inf_norm(b.theta_onestep - SwappedExpMix::swap(a.theta_onestep)), 1e-12);
}

TEST(MlWaldIntervals, GaussianHalfWidth) {
  OneStepResult r;
  r.theta_onestep = vec({3.0});
  r.ml_cov = SymMatrix::diagonal(vec({1.0 / 100.0}));
  const auto iv = ml_wald_intervals(r, 0.95);
  EXPECT_NEAR(iv[0].hi - 3.0, 0.1959964, 1e-6);
  EXPECT_NEAR(3.0 - iv[0].lo, 0.1959964, 1e-6);
  r.ml_cov = SymMatrix(1);
  EXPECT_THROW(ml_wald_intervals(r, 0.95), Error);
}
