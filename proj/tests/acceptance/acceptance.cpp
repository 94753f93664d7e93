// Acceptance run: one PASS/FAIL line per criterion. The process exits 0 when
// every criterion could be evaluated, whatever the verdicts; a harness
// error exits 1.
#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "vmest/vmest.hpp"
#include "vmest/harness/study.hpp"

#ifndef VMEST_CONFIG_DIR
#define VMEST_CONFIG_DIR "configs"
#endif

using namespace vmest;
using namespace vmest::harness;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double x, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << x;
  return os.str();
}

std::map<std::string, ExperimentConfig> experiments() {
  std::map<std::string, ExperimentConfig> out;
  for (auto& c : load_config(std::string(VMEST_CONFIG_DIR) + "/paper_tables.toml")) out[c.name] = c;
  return out;
}

// Reports from the first pass, kept for the determinism rerun.
std::map<std::string, std::string> g_first_pass;

const StudyReport& run_cached(const ExperimentConfig& c, std::map<std::string, StudyReport>& cache) {
  auto it = cache.find(c.name);
  if (it != cache.end()) return it->second;
  StudyReport r = run_study(c, 1);
  g_first_pass[c.name] = dump17(to_json(r, false));
  std::filesystem::create_directories("acceptance_reports");
  write_text("acceptance_reports/" + c.name + ".json", dump17(to_json(r)) + "\n");
  write_text("acceptance_reports/" + c.name + ".csv", study_csv(r));
  return cache.emplace(c.name, std::move(r)).first->second;
}

const ParamSummary& param(const StudyReport& r, const std::string& est, const std::string& name) {
  const EstimatorSummary* e = r.find(est);
  if (!e) throw Error(ErrorKind::InvalidInput, "report has no estimator " + est);
  for (const auto& p : e->params) {
    if (p.name == name) return p;
  }
  throw Error(ErrorKind::InvalidInput, "report has no parameter " + name);
}

bool within(double x, double lo, double hi) { return x >= lo && x <= hi; }

Outcome criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  const models::ExpMix model;
  RngStream rng(101, 0);
  Vec truth = Vec::Zero(2);
  std::vector<models::ExpMixDatum> xs(20);
  for (auto& x : xs) x = model.simulate(truth, rng);
  const double g[3] = {std::log(0.5), 0.0, std::log(2.0)};
  const FitConfig fc;
  double ref = 0.0, worst = 0.0;
  bool first = true;
  for (double a : g) {
    for (double b : g) {
      Vec th(2);
      th << a, b;
      for (const auto& x : xs) {
        const double c = profiled_criterion(model, th, x, fc) - model.marginal_loglik(th, x);
        if (first) {
          ref = c;
          first = false;
        }
        worst = std::max(worst, std::abs(c - ref));
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-8 && secs < 1.0, "max deviation " + fmt(worst) + ", " + fmt(secs) + " s"};
}

Outcome criterion2(const std::map<std::string, ExperimentConfig>& ex, std::map<std::string, StudyReport>& cache) {
  const auto t0 = std::chrono::steady_clock::now();
  bool ok = true;
  std::string detail;
  for (const char* name : {"table1_wellspecified", "table1_misspecified"}) {
    const StudyReport& r = run_cached(ex.at(name), cache);
    const double c1 = *param(r, "variational", "log_lambda1").coverage;
    const double c2 = *param(r, "variational", "log_lambda2").coverage;
    const double cj = *r.find("variational")->joint_coverage;
    const double vb2 = *param(r, "vb", "log_lambda2").coverage;
    ok = ok && within(c1, 0.93, 0.97) && within(c2, 0.93, 0.97) && within(cj, 0.93, 0.97) && vb2 < 0.80 && vb2 < c2;
    detail += std::string(name) + " sandwich " + fmt(c1, 3) + "/" + fmt(c2, 3) + "/joint " + fmt(cj, 3) + " vb lambda2 " +
              fmt(vb2, 3) + "; ";
  }
  const double secs = seconds_since(t0);
  ok = ok && secs <= 600.0;
  return {ok, detail + fmt(secs) + " s"};
}

Outcome criterion3(const std::map<std::string, ExperimentConfig>& ex, std::map<std::string, StudyReport>& cache) {
  const auto t0 = std::chrono::steady_clock::now();
  const StudyReport& e1 = run_cached(ex.at("consistency_expmix"), cache);
  std::size_t quiet = 0;
  for (const auto& run : e1.consistency) quiet += run.report.verdict == Verdict::NoEvidenceOfInconsistency;
  const StudyReport& e2 = run_cached(ex.at("consistency_glmm"), cache);
  std::size_t flagged = 0;
  double worst_p = 0.0;
  for (const auto& run : e2.consistency) {
    const auto& rep = run.report;
    const bool sigma_rejects = rep.marginal_t.back().p_value < rep.alpha;
    worst_p = std::max(worst_p, rep.hotelling.p_value);
    flagged += rep.verdict == Verdict::InconsistentJoint && rep.hotelling.p_value < 1e-10 && sigma_rejects;
  }
  const double secs = seconds_since(t0);
  const bool ok = e1.consistency.size() == 100 && quiet >= 99 && e2.consistency.size() == 20 && flagged == 20 &&
                  secs <= 900.0;
  return {ok, "expmix at truth: " + std::to_string(quiet) + "/" + std::to_string(e1.consistency.size()) +
                  " no evidence; glmm at fit: " + std::to_string(flagged) + "/" + std::to_string(e2.consistency.size()) +
                  " joint rejections with log sigma^2 rejecting (max Hotelling p " + fmt(worst_p, 3) + "); " +
                  fmt(secs) + " s"};
}

const std::vector<std::string> kBeta{"female", "female_age", "female_age2", "male", "male_age", "male_age2"};
const std::vector<std::string> kAge{"female_age", "female_age2", "male_age", "male_age2"};

Outcome criterion4(const std::map<std::string, ExperimentConfig>& ex, std::map<std::string, StudyReport>& cache,
                   double& glmm_seconds) {
  const auto t0 = std::chrono::steady_clock::now();
  const StudyReport& r = run_cached(ex.at("glmm_tables"), cache);
  glmm_seconds = seconds_since(t0);
  bool order = true, close = true;
  std::string ratios_gva, ratios_mle;
  for (const auto& b : kBeta) {
    const double os = param(r, "onestep", b).variance;
    const double gva = param(r, "variational", b).variance;
    const double mle = param(r, "direct_mle", b).variance;
    order = order && os <= gva;
    close = close && std::abs(os / mle - 1.0) <= 0.10;
    ratios_gva += fmt(os / gva, 3) + " ";
    ratios_mle += fmt(os / mle, 3) + " ";
  }
  const auto& s = param(r, "variational", "log_sigma2");
  const double z = s.bias / s.se_of_mean;
  const bool biased = std::abs(z) > 5.0;
  const bool ok = order && close && biased && glmm_seconds <= 1800.0;
  return {ok, std::string("Var(OS)/Var(GVA) [") + ratios_gva + "] " + (order ? "ok" : "violated") +
                  "; Var(OS)/Var(MLE) [" + ratios_mle + "] " + (close ? "ok" : "violated") +
                  "; GVA log sigma^2 bias " + fmt(z, 3) + " SE; " + fmt(glmm_seconds) + " s"};
}

Outcome criterion5(const std::map<std::string, ExperimentConfig>& ex, std::map<std::string, StudyReport>& cache,
                   double glmm_seconds) {
  const StudyReport& r = run_cached(ex.at("glmm_tables"), cache);
  bool ok = true;
  std::string os_cov, gva_cov;
  for (const auto& a : kAge) {
    const double co = *param(r, "onestep", a).coverage;
    const double cg = *param(r, "variational", a).coverage;
    ok = ok && within(co, 0.92, 0.98) && within(cg, 0.92, 0.98);
    os_cov += fmt(co, 3) + " ";
    gva_cov += fmt(cg, 3) + " ";
  }
  const double os_s = *param(r, "onestep", "log_sigma2").coverage;
  const double gva_s = *param(r, "variational", "log_sigma2").coverage;
  ok = ok && os_s < 0.30 && gva_s < 0.30 && glmm_seconds <= 1800.0;
  return {ok, "age coverage one-step [" + os_cov + "] GVA [" + gva_cov + "]; log sigma^2 coverage one-step " +
                  fmt(os_s, 3) + ", GVA " + fmt(gva_s, 3)};
}

Outcome criterion6() {
  const auto t0 = std::chrono::steady_clock::now();
  RngStream rng(606, 0);
  const FitConfig fc;
  const models::ExpMix em;
  double worst_a = 0.0;
  for (int k = 0; k < 10; ++k) {
    Vec th(2);
    th << rng.normal(0.0, 0.7), rng.normal(0.0, 0.7);
    const auto x = em.simulate(th, rng);
    const Vec psi = profile_psi(em, th, x, fc);
    const Matrix block = profiled_hessian(em, th, psi, x).matrix();
    const Matrix fd = hess_fd([&](const Vec& t) { return profiled_criterion(em, t, x, fc); }, th).matrix();
    worst_a = std::max(worst_a, (block - fd).cwiseAbs().maxCoeff());
  }
  double worst_g = 0.0;
  auto check = [&](const Vec& a, const Vec& b) {
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      worst_g = std::max(worst_g, std::abs(a(i) - b(i)) / std::max(1.0, std::abs(a(i))));
    }
  };
  for (int k = 0; k < 50; ++k) {
    Vec th(2), psi(2);
    th << rng.normal(0.0, 0.7), rng.normal(0.0, 0.7);
    psi << rng.normal(0.0, 1.0), rng.normal(-0.3, 0.3);
    const auto x = em.simulate(th, rng);
    check(em.grad_theta_v(th, psi, x), grad_fd([&](const Vec& t) { return em.v(t, psi, x); }, th));
    check(em.grad_psi_v(th, psi, x), grad_fd([&](const Vec& p) { return em.v(th, p, x); }, psi));
  }
  const models::GlmmRi gm(6);
  const auto designs = models::synthetic_designs(50, {}, rng);
  for (int k = 0; k < 50; ++k) {
    Vec th(7), psi(2);
    th << rng.normal(-5.6, 1.0), rng.normal(12.0, 1.0), rng.normal(-10.0, 1.0), rng.normal(-5.2, 1.0),
        rng.normal(12.0, 1.0), rng.normal(-10.0, 1.0), rng.normal(1.0, 0.5);
    psi << rng.normal(0.0, 1.0), rng.normal(0.0, 0.5);
    const auto x = gm.simulate(th, designs[static_cast<std::size_t>(k)], rng);
    check(gm.grad_theta_v(th, psi, x), grad_fd([&](const Vec& t) { return gm.v(t, psi, x); }, th));
    check(gm.grad_psi_v(th, psi, x), grad_fd([&](const Vec& p) { return gm.v(th, p, x); }, psi));
  }
  const double secs = seconds_since(t0);
  return {worst_a <= 1e-4 && worst_g <= 1e-6 && secs < 30.0,
          "block vs FD Hessian max " + fmt(worst_a, 3) + "; analytic vs FD gradient max " + fmt(worst_g, 3) + "; " +
              fmt(secs) + " s"};
}

double trapezoid_log(const std::function<double(double)>& logf, double lo, double hi, int points) {
  const double h = (hi - lo) / (points - 1);
  double mx = -INFINITY;
  for (int i = 0; i < points; ++i) mx = std::max(mx, logf(lo + h * i));
  double s = 0.0;
  for (int i = 0; i < points; ++i) s += (i == 0 || i == points - 1 ? 0.5 : 1.0) * std::exp(logf(lo + h * i) - mx);
  return mx + std::log(s * h);
}

Outcome criterion7() {
  const auto t0 = std::chrono::steady_clock::now();
  // Quadrature marginals.
  const models::ExpMix em;
  RngStream rng(707, 0);
  double worst_q = 0.0;
  for (double l1 : {0.5, 1.0, 2.0}) {
    for (double l2 : {0.5, 1.0, 2.0}) {
      Vec th(2);
      th << std::log(l1), std::log(l2);
      const auto x = em.simulate(th, rng);
      const double quad = em.marginal_loglik_quadrature(th, x);
      const double trap = trapezoid_log([&](double u) { return models::ExpMix::log_joint_log_latent(th, x, u); },
                                        -40.0, 15.0, 200000);
      worst_q = std::max(worst_q, std::abs(quad - trap));
    }
  }
  const models::GlmmRi gm(6);
  Vec tg(7);
  tg << -5.6, 12.0, -10.0, -5.2, 12.0, -10.0, 1.4;
  const double sd = std::exp(0.5 * tg(6));
  const auto designs = models::synthetic_designs(10, {}, rng);
  for (const auto& d : designs) {
    const auto s = gm.simulate(tg, d, rng);
    const Vec eta = s.design * tg.head(6);
    auto logjoint = [&](double b) {
      double l = -0.5 * b * b / (sd * sd) - std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi);
      for (Eigen::Index j = 0; j < eta.size(); ++j) {
        const double e = eta(j) + b;
        l += s.y(j) * e - (e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e)));
      }
      return l;
    };
    worst_q = std::max(worst_q, std::abs(gm.marginal_loglik(tg, s) - trapezoid_log(logjoint, -25 * sd, 25 * sd, 200000)));
  }
  // Test p-values against Boost distribution oracles.
  double worst_p = 0.0;
  for (int k = 0; k < 20; ++k) {
    const Eigen::Index b = 20 + 10 * k, d = 1 + k % 4;
    Matrix g(b, d);
    for (Eigen::Index i = 0; i < b; ++i) {
      for (Eigen::Index j = 0; j < d; ++j) g(i, j) = rng.normal(0.1 * static_cast<double>(j), 1.0);
    }
    const auto t = marginal_t_tests(g);
    const boost::math::students_t tdist(static_cast<double>(b - 1));
    for (const auto& tr : t) {
      worst_p = std::max(worst_p, std::abs(tr.p_value - 2.0 * boost::math::cdf(boost::math::complement(tdist, std::abs(tr.statistic)))));
    }
    const auto h = hotelling_t2(g);
    const boost::math::fisher_f fdist(static_cast<double>(d), static_cast<double>(b - d));
    worst_p = std::max(worst_p, std::abs(h.p_value - boost::math::cdf(boost::math::complement(fdist, h.f))));
    // At the oracle's critical value the p-value is the nominal level.
    const double crit = boost::math::quantile(boost::math::complement(fdist, 0.05));
    worst_p = std::max(worst_p, std::abs(sf(FDist{static_cast<double>(d), static_cast<double>(b - d)}, crit) - 0.05));
  }
  // Null calibration of Hotelling.
  int rejects = 0;
  const int trials = 10000;
  for (int k = 0; k < trials; ++k) {
    RngStream r(708, static_cast<std::uint64_t>(k));
    Matrix g(200, 3);
    for (Eigen::Index i = 0; i < 200; ++i) {
      for (Eigen::Index j = 0; j < 3; ++j) g(i, j) = r.normal();
    }
    rejects += hotelling_t2(g).p_value < 0.05;
  }
  const double rate = static_cast<double>(rejects) / trials;
  const double secs = seconds_since(t0);
  return {worst_q <= 1e-6 && worst_p <= 1e-6 && std::abs(rate - 0.05) <= 0.01 && secs <= 300.0,
          "quadrature vs trapezoid max " + fmt(worst_q, 3) + "; p-value vs oracle max " + fmt(worst_p, 3) +
              "; null Hotelling rejection " + fmt(rate, 4) + "; " + fmt(secs) + " s"};
}

Outcome criterion8(const std::map<std::string, ExperimentConfig>& ex) {
  const unsigned workers = std::max(3u, workers_from_env());
  std::string detail;
  bool ok = true;
  for (const auto& [name, first] : g_first_pass) {
    const std::string again = dump17(to_json(run_study(ex.at(name), workers), false));
    const bool same = again == first;
    ok = ok && same;
    detail += name + (same ? " identical" : " DIFFERS") + "; ";
  }
  return {ok && g_first_pass.size() == 5, detail + "rerun with " + std::to_string(workers) + " workers vs 1"};
}

void report(int k, const Outcome& o) {
  std::printf("criterion %d: %s  %s\n", k, o.pass ? "PASS" : "FAIL", o.detail.c_str());
  std::fflush(stdout);
}

}  // namespace

int main() {
  try {
    const auto ex = experiments();
    std::map<std::string, StudyReport> cache;
    double glmm_seconds = 0.0;
    report(1, criterion1());
    report(2, criterion2(ex, cache));
    report(3, criterion3(ex, cache));
    report(4, criterion4(ex, cache, glmm_seconds));
    report(5, criterion5(ex, cache, glmm_seconds));
    report(6, criterion6());
    report(7, criterion7());
    report(8, criterion8(ex));
  } catch (const std::exception& e) {
    std::printf("acceptance harness error: %s\n", e.what());
    return 1;
  }
  return 0;
}
