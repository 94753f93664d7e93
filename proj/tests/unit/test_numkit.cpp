#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/gamma.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <atomic>
#include <cmath>
#include <numbers>

#include "vmest/numkit/distributions.hpp"
#include "vmest/numkit/finite_diff.hpp"
#include "vmest/numkit/linalg.hpp"
#include "vmest/numkit/optimize.hpp"
#include "vmest/numkit/parallel.hpp"
#include "vmest/numkit/rng.hpp"
#include "vmest/models/expmix.hpp"

using namespace vmest;

namespace {

Vec vec(std::initializer_list<double> xs) {
  Vec v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

SymMatrix sym(std::initializer_list<std::initializer_list<double>> rows) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  Matrix m(n, n);
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double x : r) m(i, j++) = x;
    ++i;
  }
  return SymMatrix(m);
}

SymMatrix random_pd(RngStream& rng, Eigen::Index d) {
  Matrix a(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) a(i, j) = rng.normal();
  }
  return SymMatrix(Matrix(a * a.transpose() + 0.1 * Matrix::Identity(d, d)));
}

}  // namespace

TEST(SymMatrix, SymmetricByConstruction) {
  Matrix m(2, 2);
  m << 1, 2, 4, 3;
  const SymMatrix s(m);
  EXPECT_DOUBLE_EQ(s(0, 1), 3.0);
  EXPECT_DOUBLE_EQ(s(1, 0), 3.0);
  SymMatrix t(3);
  t.set(0, 2, 5.0);
  EXPECT_DOUBLE_EQ(t(2, 0), 5.0);
}

TEST(SymMatrix, RejectsNonSquareAndNonFinite) {
  EXPECT_THROW(SymMatrix(Matrix(2, 3)), Error);
  Matrix m = Matrix::Identity(2, 2);
  m(0, 1) = NAN;
  EXPECT_THROW(SymMatrix{m}, Error);
}

TEST(CholSolve, IdentityDiagonalAndHandElimination) {
  EXPECT_TRUE(chol_solve(SymMatrix::identity(3), vec({1, 2, 3})).isApprox(vec({1, 2, 3}), 1e-14));
  EXPECT_TRUE(chol_solve(sym({{4, 0}, {0, 9}}), vec({4, 9})).isApprox(vec({1, 1}), 1e-14));
  EXPECT_TRUE(chol_solve(sym({{2, 1}, {1, 2}}), vec({3, 3})).isApprox(vec({1, 1}), 1e-14));
}

TEST(CholSolve, ResidualBoundOnRandomSystems) {
  RngStream rng(1, 0);
  for (int k = 0; k < 100; ++k) {
    const Eigen::Index d = 1 + k % 6;
    const SymMatrix m = random_pd(rng, d);
    Vec b(d);
    for (Eigen::Index i = 0; i < d; ++i) b(i) = rng.normal();
    const Vec x = chol_solve(m, b);
    EXPECT_LE(inf_norm(m.matrix() * x - b), 1e-10 * (1.0 + inf_norm(b)));
  }
}

TEST(CholSolve, NegativeDefiniteFailsAfterJitter) {
  try {
    chol_solve(sym({{-1, 0}, {0, -2}}), vec({1, 1}));
    FAIL() << "expected NotPositiveDefinite";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NotPositiveDefinite);
  }
}

TEST(CholSolve, JitterRescuesNearSingular) {
  // Semidefinite with a zero eigenvalue: rescued by the smallest jitter.
  const SymMatrix m = sym({{1, 1}, {1, 1}});
  EXPECT_NO_THROW(chol_factor(m));
}

TEST(SymInverse, KnownInverses) {
  EXPECT_TRUE(sym_inverse(SymMatrix::identity(2)).matrix().isApprox(Matrix::Identity(2, 2)));
  EXPECT_TRUE(sym_inverse(sym({{2, 0}, {0, 4}})).matrix().isApprox(sym({{0.5, 0}, {0, 0.25}}).matrix()));
  const Matrix expect = sym({{2.0 / 3, -1.0 / 3}, {-1.0 / 3, 2.0 / 3}}).matrix();
  EXPECT_LE((sym_inverse(sym({{2, 1}, {1, 2}})).matrix() - expect).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(SymInverse, SingularThrows) {
  try {
    sym_inverse(sym({{1, 2}, {2, 4}}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Singular);
  }
}

TEST(SymInverse, InvolutionOnWellConditionedInputs) {
  RngStream rng(2, 0);
  for (int k = 0; k < 200; ++k) {
    const SymMatrix m = random_pd(rng, 1 + k % 6);
    const SymMatrix back = sym_inverse(sym_inverse(m));
    EXPECT_LE((back.matrix() - m.matrix()).cwiseAbs().maxCoeff(), 1e-6 * (1.0 + m.matrix().cwiseAbs().maxCoeff()));
    const Matrix prod = m.matrix() * sym_inverse(m).matrix();
    EXPECT_LE((prod - Matrix::Identity(m.dim(), m.dim())).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(GradFd, Examples) {
  auto sq = [](const Vec& x) { return x(0) * x(0) + x(1) * x(1); };
  EXPECT_LE(inf_norm(grad_fd(sq, vec({1, 1})) - vec({2, 2})), 1e-6);
  auto c = [](const Vec&) { return 3.5; };
  EXPECT_LE(inf_norm(grad_fd(c, vec({0.3, -7}))), 1e-8);
  auto es = [](const Vec& x) { return std::exp(x(0)) * std::sin(x(1)); };
  EXPECT_LE(inf_norm(grad_fd(es, vec({0, std::numbers::pi / 2})) - vec({1, 0})), 1e-6);
}

TEST(GradFd, NonFiniteReportsCoordinate) {
  auto f = [](const Vec& x) { return x(1) > 0.5 ? std::log(-1.0) : 0.0; };
  try {
    grad_fd(f, vec({0, 0.5}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonFiniteEvaluation);
    ASSERT_TRUE(e.index().has_value());
    EXPECT_EQ(*e.index(), 1u);
  }
}

TEST(HessFd, Examples) {
  auto sq = [](const Vec& x) { return x(0) * x(0); };
  EXPECT_NEAR(hess_fd(sq, vec({3}))(0, 0), 2.0, 1e-4);
  auto bil = [](const Vec& x) { return x(0) * x(1); };
  const SymMatrix h = hess_fd(bil, vec({1, 2}));
  EXPECT_NEAR(h(0, 0), 0.0, 1e-4);
  EXPECT_NEAR(h(1, 1), 0.0, 1e-4);
  EXPECT_NEAR(h(0, 1), 1.0, 1e-4);
  EXPECT_EQ(h(0, 1), h(1, 0));
}

TEST(HessFd, ExpMixCriterionMatchesHandHessian) {
  // v in theta at fixed (psi, x): 2t1 - e^t1 x1 + t2 - (e^t1 x2 + e^t2) E + const
  // d2/dt1^2 = -e^t1 (x1 + x2 E), d2/dt2^2 = -e^t2 E, mixed = 0.
  const models::ExpMix model;
  const models::ExpMixDatum x{0.7, 1.9};
  const Vec psi = vec({-0.4, -0.2});
  const double e = std::exp(psi(0) + 0.5 * std::exp(2 * psi(1)));
  RngStream rng(3, 0);
  for (int k = 0; k < 10; ++k) {
    const Vec th = vec({rng.normal(), rng.normal()});
    const SymMatrix h = hess_fd([&](const Vec& t) { return model.v(t, psi, x); }, th);
    EXPECT_NEAR(h(0, 0), -std::exp(th(0)) * (x.x1 + x.x2 * e), 1e-4);
    EXPECT_NEAR(h(1, 1), -std::exp(th(1)) * e, 1e-4);
    EXPECT_NEAR(h(0, 1), 0.0, 1e-4);
  }
}

TEST(FiniteDifferences, PolynomialProperty) {
  RngStream rng(4, 0);
  for (int k = 0; k < 100; ++k) {
    const double a = rng.normal(), b = rng.normal(), c = rng.normal();
    auto f = [&](const Vec& x) { return a * x(0) * x(0) * x(1) + b * x(1) * x(1) * x(1) + c * x(0); };
    const Vec x = vec({rng.normal(), rng.normal()});
    const Vec g = vec({2 * a * x(0) * x(1) + c, a * x(0) * x(0) + 3 * b * x(1) * x(1)});
    EXPECT_LE(inf_norm(grad_fd(f, x) - g), 1e-6 * (1.0 + inf_norm(g)));
    const SymMatrix h = hess_fd(f, x);
    EXPECT_NEAR(h(0, 0), 2 * a * x(1), 1e-4);
    EXPECT_NEAR(h(0, 1), 2 * a * x(0), 1e-4);
    EXPECT_NEAR(h(1, 1), 6 * b * x(1), 1e-4);
  }
}

TEST(Quantile, Examples) {
  EXPECT_NEAR(quantile(Normal{}, 0.975), 1.959964, 1e-6);
  EXPECT_NEAR(quantile(ChiSquared{2}, 0.95), -2.0 * std::log(0.05), 1e-8);
  EXPECT_NEAR(quantile(StudentT{1e6}, 0.975), 1.959964, 1e-3);
}

TEST(Quantile, DomainErrors) {
  for (double p : {0.0, 1.0, -0.1, 1.5}) {
    try {
      quantile(Normal{}, p);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::DomainError);
    }
  }
  EXPECT_THROW(quantile(StudentT{-1}, 0.5), Error);
}

TEST(Quantile, MatchesBoostOracle) {
  const double ps[] = {1e-6, 0.001, 0.025, 0.3, 0.5, 0.77, 0.975, 0.999, 1 - 1e-6};
  for (double p : ps) {
    EXPECT_NEAR(quantile(Normal{}, p), boost::math::quantile(boost::math::normal(), p),
                1e-8 * std::max(1.0, std::abs(boost::math::quantile(boost::math::normal(), p))));
    for (double df : {1.0, 2.5, 7.0, 30.0, 400.0}) {
      const double t = boost::math::quantile(boost::math::students_t(df), p);
      EXPECT_NEAR(quantile(StudentT{df}, p), t, 1e-8 * std::max(1.0, std::abs(t))) << "t df=" << df << " p=" << p;
      const double c = boost::math::quantile(boost::math::chi_squared(df), p);
      EXPECT_NEAR(quantile(ChiSquared{df}, p), c, 1e-8 * std::max(1.0, c)) << "chi2 df=" << df << " p=" << p;
    }
    for (auto [d1, d2] : {std::pair{1.0, 5.0}, {3.0, 197.0}, {7.0, 9993.0}}) {
      const double f = boost::math::quantile(boost::math::fisher_f(d1, d2), p);
      EXPECT_NEAR(quantile(FDist{d1, d2}, p), f, 1e-8 * std::max(1.0, f)) << "F " << d1 << "," << d2 << " p=" << p;
    }
    const double g = boost::math::quantile(boost::math::gamma_distribution<>(2.5, 1.0 / 4.0), p);
    EXPECT_NEAR(quantile(GammaDist{2.5, 4.0}, p), g, 1e-8 * std::max(1.0, g));
  }
}

TEST(Cdf, TailsMatchBoost) {
  for (double x : {-40.0, -5.0, -1.0, 0.0, 0.5, 3.0, 12.0}) {
    EXPECT_NEAR(cdf(Normal{}, x), boost::math::cdf(boost::math::normal(), x), 1e-14);
    const double upper = boost::math::cdf(boost::math::complement(boost::math::students_t(9.0), x));
    EXPECT_NEAR(sf(StudentT{9}, x), upper, 1e-12 * std::max(upper, 1e-300) + 1e-300);
  }
  // Far tails keep relative accuracy.
  const double tiny = boost::math::cdf(boost::math::complement(boost::math::fisher_f(3.0, 500.0), 60.0));
  EXPECT_NEAR(sf(FDist{3, 500}, 60.0) / tiny, 1.0, 1e-8);
}

TEST(PrecisionDiagVariance, Examples) {
  EXPECT_DOUBLE_EQ(precision_diag_variance(SymMatrix::identity(3), 1), 1.0);
  EXPECT_NEAR(precision_diag_variance(sym({{1, 0.5}, {0.5, 1}}), 0), 0.75, 1e-14);
  const SymMatrix d = SymMatrix::diagonal(vec({2, 3, 7}));
  for (Eigen::Index k = 0; k < 3; ++k) EXPECT_NEAR(precision_diag_variance(d, k), d(k, k), 1e-14);
  EXPECT_THROW(precision_diag_variance(sym({{1, 2}, {2, 1}}), 0), Error);
}

TEST(PrecisionDiagVariance, NeverExceedsMarginalVariance) {
  RngStream rng(5, 0);
  for (int k = 0; k < 1000; ++k) {
    const Eigen::Index d = 1 + k % 6;
    const SymMatrix s = random_pd(rng, d);
    const Matrix inv = s.matrix().inverse();
    for (Eigen::Index j = 0; j < d; ++j) {
      const double v = precision_diag_variance(s, j);
      EXPECT_LE(v, s(j, j) + 1e-12);
      EXPECT_NEAR(v, 1.0 / inv(j, j), 1e-8 * s(j, j));
    }
  }
}

TEST(RngStream, DeterministicAndDistinct) {
  RngStream a(42, 7), b(42, 7), c(42, 8), d(43, 7);
  bool differs_c = false, differs_d = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    differs_c |= x != c.next_u64();
    differs_d |= x != d.next_u64();
  }
  EXPECT_TRUE(differs_c);
  EXPECT_TRUE(differs_d);
}

TEST(RngStream, NeighbouringStreamsUncorrelated) {
  // Correlation between streams k and k+1 over 10^5 uniforms is O(1/sqrt(n)).
  const int n = 100000;
  RngStream a(9, 100), b(9, 101);
  double sab = 0.0, sa = 0.0, sb = 0.0, saa = 0.0, sbb = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = a.uniform(), y = b.uniform();
    sab += x * y;
    sa += x;
    sb += y;
    saa += x * x;
    sbb += y * y;
  }
  const double cov = sab / n - (sa / n) * (sb / n);
  const double corr = cov / std::sqrt((saa / n - sa * sa / n / n) * (sbb / n - sb * sb / n / n));
  EXPECT_LT(std::abs(corr), 5.0 / std::sqrt(n));
}

TEST(RngStream, DrawMomentsMatchDistributions) {
  RngStream rng(11, 0);
  const int n = 200000;
  double se = 0, sg = 0, sg2 = 0, sn = 0, sn2 = 0;
  for (int i = 0; i < n; ++i) {
    se += rng.exponential(2.0);
    const double g = rng.gamma(3.0, 1.5);
    sg += g;
    sg2 += g * g;
    const double z = rng.normal();
    sn += z;
    sn2 += z * z;
  }
  EXPECT_NEAR(se / n, 0.5, 5 * 0.5 / std::sqrt(n));
  EXPECT_NEAR(sg / n, 2.0, 5 * std::sqrt(3.0) / 1.5 / std::sqrt(n));
  EXPECT_NEAR(sg2 / n - (sg / n) * (sg / n), 3.0 / 2.25, 0.02);
  EXPECT_NEAR(sn / n, 0.0, 5.0 / std::sqrt(n));
  EXPECT_NEAR(sn2 / n, 1.0, 0.01);
  // Shape below one goes through the boost-by-one path.
  double s = 0;
  for (int i = 0; i < n; ++i) s += rng.gamma(0.4, 2.0);
  EXPECT_NEAR(s / n, 0.2, 5 * std::sqrt(0.4) / 2.0 / std::sqrt(n));
}

TEST(RngStream, IndexIsUniform) {
  RngStream rng(12, 0);
  int counts[7] = {};
  for (int i = 0; i < 70000; ++i) ++counts[rng.index(7)];
  for (int c : counts) EXPECT_NEAR(c, 10000, 500);
}

TEST(ParallelFor, ResultsIndependentOfWorkerCount) {
  std::vector<double> one(257), many(257);
  auto body = [](std::vector<double>& out) {
    return [&out](std::size_t i) {
      RngStream r(5, i);
      out[i] = r.normal();
    };
  };
  parallel_for(one.size(), 1, body(one));
  parallel_for(many.size(), 4, body(many));
  EXPECT_EQ(one, many);
}

TEST(ParallelFor, RethrowsLowestIndexError) {
  try {
    parallel_for(50, 4, [](std::size_t i) {
      if (i == 17 || i == 31) throw Error(ErrorKind::InvalidInput, "bad", i);
    });
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(*e.index(), 17u);
  }
}

TEST(WorkersFromEnv, DefaultsToOne) {
  unsetenv("VMEST_WORKERS");
  EXPECT_EQ(workers_from_env(), 1u);
  setenv("VMEST_WORKERS", "3", 1);
  EXPECT_EQ(workers_from_env(), 3u);
  setenv("VMEST_WORKERS", "zero", 1);
  EXPECT_EQ(workers_from_env(), 1u);
  unsetenv("VMEST_WORKERS");
}

TEST(Bfgs, MaximizesConcaveQuadratic) {
  const SymMatrix a = sym({{3, 1}, {1, 2}});
  const Vec b = vec({1, -2});
  auto f = [&](const Vec& x) { return Evaluation{b.dot(x) - 0.5 * x.dot(a.matrix() * x), b - a.matrix() * x}; };
  const OptimResult r = bfgs_maximize(f, vec({5, 5}), OptimOptions{});
  ASSERT_TRUE(r.converged);
  EXPECT_LE(inf_norm(r.x - chol_solve(a, b)), 1e-8);
}

TEST(Bfgs, RosenbrockFromStandardStart) {
  auto f = [](const Vec& x) {
    const double a = 1 - x(0), b = x(1) - x(0) * x(0);
    return Evaluation{-(a * a + 100 * b * b), vec({2 * a + 400 * x(0) * b, -200 * b})};
  };
  OptimOptions opt;
  opt.max_iter = 2000;
  const OptimResult r = bfgs_maximize(f, vec({-1.2, 1}), opt);
  ASSERT_TRUE(r.converged);
  EXPECT_LE(inf_norm(r.x - vec({1, 1})), 1e-6);
  for (std::size_t i = 1; i < r.trace.size(); ++i) EXPECT_GE(r.trace[i].criterion, r.trace[i - 1].criterion - 1e-12);
}

TEST(Newton, MaximizesSmoothConcaveFunction) {
  // f = -sum exp(x_i) + sum x_i has its maximum at 0 with Hessian -I.
  auto f = [](const Vec& x) {
    const Vec e = x.array().exp();
    return NewtonEvaluation{x.sum() - e.sum(), Vec(1.0 - e.array()), Matrix(Vec(-e).asDiagonal())};
  };
  const OptimResult r = newton_maximize(f, vec({3, -2, 0.5}), OptimOptions{});
  ASSERT_TRUE(r.converged);
  EXPECT_LE(inf_norm(r.x), 1e-9);
  EXPECT_LT(r.iterations, 30);
}

TEST(Newton, StallToleranceAcceptsNoisyGradient) {
  // The gradient carries a 1e-7 error that flips sign across the optimum, so
  // iterates bounce around 0 with no change in value.
  auto f = [](const Vec& x) {
    const Vec noise = x.unaryExpr([](double xi) { return xi > 0.0 ? -1e-7 : 1e-7; });
    return NewtonEvaluation{-0.5 * x.squaredNorm(), Vec(-x + noise), Matrix(-Matrix::Identity(2, 2))};
  };
  OptimOptions opt;
  opt.grad_tol = 1e-12;
  opt.max_iter = 50;
  EXPECT_FALSE(newton_maximize(f, vec({1, 1}), opt).converged);
  opt.stall_grad_tol = 1e-6;
  const OptimResult r = newton_maximize(f, vec({1, 1}), opt);
  EXPECT_TRUE(r.converged);
  EXPECT_LE(inf_norm(r.x), 1e-6);
}

TEST(Newton, DecrementToleranceStopsEarly) {
  auto f = [](const Vec& x) {
    return NewtonEvaluation{-0.5 * x.squaredNorm(), Vec(-x), Matrix(-Matrix::Identity(1, 1))};
  };
  OptimOptions opt;
  opt.grad_tol = 0.0;
  opt.decrement_tol = 1e-3;
  const OptimResult r = newton_maximize(f, vec({0.01}), opt);
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.iterations, 0);
}
