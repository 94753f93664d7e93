#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "vmest/consistency.hpp"
#include "vmest/harness/config.hpp"
#include "vmest/harness/csv.hpp"
#include "vmest/models/expmix.hpp"
#include "vmest/models/expmix_vb.hpp"
#include "vmest/models/glmm_ri.hpp"
#include "vmest/onestep.hpp"
#include "vmest/sandwich.hpp"

namespace vmest::harness {

/// Consistency runs draw from streams above this offset so they never
/// overlap the replicate streams.
inline constexpr std::uint64_t kDiagnosticStreamBase = std::uint64_t{1} << 32;

struct ParamSummary {
  std::string name;
  double truth = 0.0;
  double mean = 0.0;
  double variance = 0.0;
  double bias = 0.0;
  double se_of_mean = 0.0;
  std::optional<double> coverage;
};

struct EstimatorSummary {
  std::string estimator;
  std::vector<ParamSummary> params;
  std::optional<double> joint_coverage;
};

struct ReplicateFailure {
  std::size_t replicate;
  std::string estimator;
  std::string message;
};

struct ConsistencyRun {
  Vec theta_star;
  ConsistencyReport report;
};

struct StudyReport {
  ExperimentConfig config;
  std::vector<std::string> param_names;
  Vec truth;
  std::size_t replicates_ok = 0;
  std::vector<ReplicateFailure> failures;
  std::vector<EstimatorSummary> estimators;
  std::vector<ConsistencyRun> consistency;
  double seconds = 0.0;
  unsigned workers = 1;

  const EstimatorSummary* find(const std::string& name) const {
    for (const auto& e : estimators) {
      if (e.estimator == name) return &e;
    }
    return nullptr;
  }
};

/// One estimator's output on one replicate.
struct Draw {
  Vec estimate;
  std::vector<Interval> intervals;  // empty when the estimator has none
  std::optional<bool> joint_covered;
};

struct MleFit {
  Vec theta;
  SymMatrix cov;  // covariance of the estimate (already divided by n)
};

/// Maximize the mean marginal log-likelihood with BFGS; the covariance is
/// the inverse negative Hessian of the summed log-likelihood.
template <class M>
  requires VariationalModel<M> && HasMarginalLoglik<M>
MleFit generic_direct_mle(const M& model, const Dataset<typename M::Datum>& data, const Vec& start) {
  auto objective = [&](const Vec& t) { return Evaluation{mean_marginal_loglik(model, t, data), mean_marginal_score(model, t, data)}; };
  OptimOptions opt;
  opt.grad_tol = 1e-9;
  opt.max_iter = 1000;
  const OptimResult r = bfgs_maximize(objective, start, opt);
  if (!r.converged) throw Error(ErrorKind::NoConvergence, "direct MLE did not converge");
  const Matrix jac = jacobian_fd([&](const Vec& t) { return mean_marginal_score(model, t, data); }, r.x);
  const double n = static_cast<double>(data.n());
  return {r.x, SymMatrix(Matrix(sym_inverse(SymMatrix(Matrix(-jac))).matrix() / n))};
}

inline MleFit glmm_direct_mle(const models::GlmmRi& model, const Dataset<models::GlmmSubject>& data) {
  const models::MleResult r = model.direct_mle(data.data());
  Matrix h = Matrix::Zero(model.dim_theta(), model.dim_theta());
  for (const auto& s : data.data()) h -= model.marginal_hessian(r.theta, s);
  SymMatrix info{Matrix(h)};
  try {
    return {r.theta, sym_inverse(info)};
  } catch (const Error&) {
    throw Error(ErrorKind::InfoSingular, "MLE information is singular");
  }
}

inline std::vector<std::string> param_names(const ExperimentConfig& c) {
  if (c.model.id == ModelId::ExpMix) return {"log_lambda1", "log_lambda2"};
  auto names = models::synthetic_covariate_names();
  names.push_back("log_sigma2");
  return names;
}

inline InformationKind information_kind(const DiagnosticsConfig& d) {
  return d.information == "negative_hessian" ? InformationKind::NegativeHessian : InformationKind::OuterProduct;
}

namespace detail {

inline bool covers(const Interval& iv, double truth) { return iv.lo <= truth && truth <= iv.hi; }

inline Draw wald_draw(const Vec& theta, const SymMatrix& cov, const Vec& truth, double level) {
  Draw d{theta, wald_intervals(theta, cov, 1, level), std::nullopt};
  d.joint_covered = !wald_joint_test(theta, cov, 1, truth, level).reject;
  return d;
}

// Runs the common estimators (variational, onestep, direct_mle) on one
// replicate data set. `extra` handles the model-specific ones.
template <class M, class Mle>
std::vector<Draw> run_estimators(const ExperimentConfig& c, const M& model, const Dataset<typename M::Datum>& data,
                                 const Vec& truth, std::string& stage, Mle&& direct_mle,
                                 const std::function<Draw(const std::string&)>& extra) {
  const double level = c.study.level;
  FitConfig fc = c.fit;
  fc.workers = 1;
  std::optional<FitResult> fit;
  auto variational = [&]() -> const FitResult& {
    if (!fit) fit = fit_variational(model, data, fc);
    return *fit;
  };
  std::vector<Draw> out;
  for (const auto& e : c.study.estimators) {
    stage = e;
    if (e == "variational") {
      SandwichOptions so;
      so.tolerant = c.diagnostics.tolerant;
      const SandwichEstimate est = sandwich_cov(model, variational(), data, so);
      Draw d{est.theta_at, wald_intervals(est, level), std::nullopt};
      d.joint_covered = !wald_joint_test(est, truth, level).reject;
      out.push_back(std::move(d));
    } else if (e == "onestep") {
      const OneStepResult r = one_step(model, variational(), data, information_kind(c.diagnostics));
      out.push_back(wald_draw(r.theta_onestep, r.ml_cov, truth, level));
    } else if (e == "direct_mle") {
      const MleFit r = direct_mle();
      out.push_back(wald_draw(r.theta, r.cov, truth, level));
    } else {
      out.push_back(extra(e));
    }
  }
  return out;
}

inline std::vector<Draw> run_expmix_replicate(const ExperimentConfig& c, const Vec& truth, RngStream& rng,
                                              std::string& stage) {
  const models::ExpMix model(c.model.misspecified, c.model.marginal_order);
  std::vector<models::ExpMixDatum> xs(c.study.n);
  for (auto& x : xs) x = model.simulate(truth, rng);
  const Dataset<models::ExpMixDatum> data(std::move(xs), "simulated");
  auto mle = [&] { return generic_direct_mle(model, data, model.theta_init(data.data())); };
  auto extra = [&](const std::string& e) -> Draw {
    if (e != "vb") throw Error(ErrorKind::InvalidInput, "estimator " + e + " is not available for expmix");
    const models::VbPosterior q = models::fit_vb(data.data(), models::VbPrior{}, c.study.vb_iters);
    Vec est(2);
    est << q.lambda1.mean_log(), q.lambda2.mean_log();
    Draw d{est, {}, std::nullopt};
    // Equal-tailed intervals are invariant under the log map.
    for (const auto& iv : q.credible_intervals(c.study.level)) d.intervals.push_back({std::log(iv.lo), std::log(iv.hi)});
    d.joint_covered = q.joint_region_covers(truth, c.study.level);
    return d;
  };
  return run_estimators(c, model, data, truth, stage, mle, extra);
}

inline models::DesignOptions design_options(const ModelConfig& m) {
  return {m.visits, m.min_age, m.max_age};
}

inline std::vector<Draw> run_glmm_replicate(const ExperimentConfig& c, const Vec& truth, RngStream& rng,
                                            std::string& stage) {
  const models::GlmmRi model(static_cast<Eigen::Index>(models::synthetic_covariate_names().size()), c.model.gva_order,
                             c.model.marginal_order);
  const auto designs = models::synthetic_designs(c.study.n, design_options(c.model), rng);
  std::vector<models::GlmmSubject> subjects;
  subjects.reserve(designs.size());
  for (const auto& s : designs) subjects.push_back(model.simulate(truth, s, rng));
  const Dataset<models::GlmmSubject> data(std::move(subjects), "simulated");
  auto mle = [&] { return glmm_direct_mle(model, data); };
  auto extra = [&](const std::string& e) -> Draw {
    throw Error(ErrorKind::InvalidInput, "estimator " + e + " is not available for glmm-ri");
  };
  return run_estimators(c, model, data, truth, stage, mle, extra);
}

template <class M>
ConsistencyRun consistency_run(const ExperimentConfig& c, const M& model, const Vec& truth,
                               const Dataset<typename M::Datum>& pilot, unsigned workers, std::uint64_t stream) {
  Vec theta_star = truth;
  if (c.diagnostics.theta_star == "fitted") {
    FitConfig fc = c.fit;
    fc.workers = workers;
    theta_star = fit_variational(model, pilot, fc).theta_hat;
  }
  FitConfig fc = c.fit;
  fc.workers = workers;
  const RngStream rng(c.study.seed, stream);
  return {theta_star,
          assess_consistency(model, theta_star, pilot, c.diagnostics.reps, c.diagnostics.alpha, rng, fc)};
}

inline void validate(const ExperimentConfig& c) {
  if (!c.model.id) throw Error(ErrorKind::InvalidInput, "model id is required");
  if (!c.model.theta) throw Error(ErrorKind::InvalidInput, "model.theta (the true parameter) is required");
  const auto names = param_names(c);
  if (c.model.theta->size() != static_cast<Eigen::Index>(names.size())) {
    throw Error(ErrorKind::InvalidInput, "model.theta must have " + std::to_string(names.size()) + " entries");
  }
  if (c.study.replicates < 1) throw Error(ErrorKind::InvalidInput, "study.replicates must be at least 1");
  if (!(c.study.level > 0.0 && c.study.level < 1.0)) throw Error(ErrorKind::InvalidInput, "study.level must lie in (0, 1)");
  if (c.study.n < 1) throw Error(ErrorKind::InvalidInput, "study.n must be at least 1");
  for (const auto& e : c.study.estimators) {
    if (!kEstimators.count(e)) throw Error(ErrorKind::InvalidInput, "unknown estimator '" + e + "'");
    if (e == "vb" && c.model.id != ModelId::ExpMix) throw Error(ErrorKind::InvalidInput, "vb is only available for expmix");
  }
  c.fit.validate();
}

inline std::vector<EstimatorSummary> summarize(const ExperimentConfig& c, const std::vector<std::string>& names,
                                               const Vec& truth, const std::vector<std::vector<Draw>>& ok) {
  std::vector<EstimatorSummary> out;
  const double r = static_cast<double>(ok.size());
  for (std::size_t e = 0; e < c.study.estimators.size(); ++e) {
    EstimatorSummary s;
    s.estimator = c.study.estimators[e];
    for (std::size_t k = 0; k < names.size(); ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      ParamSummary p;
      p.name = names[k];
      p.truth = truth(kk);
      if (ok.empty()) {
        s.params.push_back(p);
        continue;
      }
      double sum = 0.0, hits = 0.0;
      bool has_intervals = true;
      for (const auto& rep : ok) {
        sum += rep[e].estimate(kk);
        if (rep[e].intervals.empty()) {
          has_intervals = false;
        } else if (covers(rep[e].intervals[k], p.truth)) {
          hits += 1.0;
        }
      }
      p.mean = sum / r;
      double ss = 0.0;
      for (const auto& rep : ok) ss += (rep[e].estimate(kk) - p.mean) * (rep[e].estimate(kk) - p.mean);
      p.variance = ok.size() > 1 ? ss / (r - 1.0) : 0.0;
      p.bias = p.mean - p.truth;
      p.se_of_mean = std::sqrt(p.variance / r);
      if (has_intervals) p.coverage = hits / r;
      s.params.push_back(p);
    }
    if (!ok.empty() && ok.front()[e].joint_covered) {
      double hits = 0.0;
      for (const auto& rep : ok) hits += *rep[e].joint_covered ? 1.0 : 0.0;
      s.joint_coverage = hits / r;
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace detail

/// Runs R replicates in parallel (replicate r draws from RngStream(seed, r))
/// and merges them in index order, then the configured consistency runs.
/// Replicates that throw are recorded and left out; more than
/// max_failure_fraction of them aborts the study.
inline StudyReport run_study(const ExperimentConfig& c, unsigned workers) {
  detail::validate(c);
  const auto start = std::chrono::steady_clock::now();
  StudyReport rep;
  rep.config = c;
  rep.workers = workers;
  rep.param_names = param_names(c);
  rep.truth = *c.model.theta;
  // Diagnostics-only experiments list no estimators and skip the replicates.
  const std::size_t r = c.study.estimators.empty() ? 0 : c.study.replicates;
  std::vector<std::variant<std::vector<Draw>, ReplicateFailure>> results(r);
  parallel_for(r, workers, [&](std::size_t i) {
    RngStream rng(c.study.seed, i);
    std::string stage = "simulate";
    try {
      results[i] = *c.model.id == ModelId::ExpMix ? detail::run_expmix_replicate(c, rep.truth, rng, stage)
                                                  : detail::run_glmm_replicate(c, rep.truth, rng, stage);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::InvalidInput) throw;
      results[i] = ReplicateFailure{i, stage, e.what()};
    }
  });
  std::vector<std::vector<Draw>> ok;
  for (auto& res : results) {
    if (auto* f = std::get_if<ReplicateFailure>(&res)) {
      rep.failures.push_back(*f);
    } else {
      ok.push_back(std::move(std::get<std::vector<Draw>>(res)));
    }
  }
  rep.replicates_ok = ok.size();
  if (static_cast<double>(rep.failures.size()) > c.study.max_failure_fraction * static_cast<double>(r)) {
    const auto& f = rep.failures.front();
    throw Error(ErrorKind::NoConvergence, std::to_string(rep.failures.size()) + " of " + std::to_string(r) +
                                              " replicates failed (first: replicate " + std::to_string(f.replicate) +
                                              ", " + f.estimator + ": " + f.message + ")");
  }
  rep.estimators = detail::summarize(c, rep.param_names, rep.truth, ok);

  if (c.diagnostics.consistency) {
    for (std::size_t k = 0; k < c.diagnostics.runs; ++k) {
      RngStream pilot_rng(c.study.seed, kDiagnosticStreamBase + 2 * k);
      const std::uint64_t stream = kDiagnosticStreamBase + 2 * k + 1;
      if (*c.model.id == ModelId::ExpMix) {
        const models::ExpMix model(c.model.misspecified, c.model.marginal_order);
        std::vector<models::ExpMixDatum> xs(c.study.n);
        for (auto& x : xs) x = model.simulate(rep.truth, pilot_rng);
        rep.consistency.push_back(detail::consistency_run(c, model, rep.truth, Dataset(std::move(xs), "pilot"),
                                                          workers, stream));
      } else {
        const models::GlmmRi model(static_cast<Eigen::Index>(rep.param_names.size()) - 1, c.model.gva_order,
                                   c.model.marginal_order);
        const auto designs = models::synthetic_designs(c.study.n, detail::design_options(c.model), pilot_rng);
        std::vector<models::GlmmSubject> subjects;
        for (const auto& s : designs) subjects.push_back(model.simulate(rep.truth, s, pilot_rng));
        rep.consistency.push_back(detail::consistency_run(c, model, rep.truth, Dataset(std::move(subjects), "pilot"),
                                                          workers, stream));
      }
    }
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

inline Json to_json(const ConsistencyReport& r, bool include_gradients = false) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["theta_star"] = to_json(r.theta_star);
  j["b"] = r.b;
  j["alpha"] = r.alpha;
  j["column_means"] = to_json(r.column_means);
  Json t = Json::array();
  for (const auto& m : r.marginal_t) t.push_back({{"statistic", m.statistic}, {"p_value", m.p_value}});
  j["marginal_t"] = t;
  j["hotelling"] = {{"t2", r.hotelling.t2}, {"f", r.hotelling.f}, {"p_value", r.hotelling.p_value}};
  j["verdict"] = to_string(r.verdict);
  Json flagged = Json::array();
  for (auto k : r.flagged_components) flagged.push_back(k);
  j["flagged_components"] = flagged;
  j["caveat"] = r.caveat;
  if (include_gradients) j["gradients"] = to_json(r.gradients);
  return j;
}

inline Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

/// Timing and worker count are the only fields that may differ between
/// runs with the same config; `include_timing = false` leaves them out.
inline Json to_json(const StudyReport& r, bool include_timing = true) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["config"] = to_json(r.config);
  j["param_names"] = r.param_names;
  j["truth"] = to_json(r.truth);
  j["replicates_requested"] = r.config.study.replicates;
  j["replicates_ok"] = r.replicates_ok;
  Json fails = Json::array();
  for (const auto& f : r.failures) {
    fails.push_back({{"replicate", f.replicate}, {"estimator", f.estimator}, {"message", f.message}});
  }
  j["failures"] = fails;
  Json ests = Json::array();
  for (const auto& e : r.estimators) {
    Json je;
    je["estimator"] = e.estimator;
    Json ps = Json::array();
    for (const auto& p : e.params) {
      ps.push_back({{"name", p.name},
                    {"truth", p.truth},
                    {"mean", p.mean},
                    {"variance", p.variance},
                    {"bias", p.bias},
                    {"se_of_mean", p.se_of_mean},
                    {"coverage", optional_json(p.coverage)}});
    }
    je["params"] = ps;
    je["joint_coverage"] = optional_json(e.joint_coverage);
    ests.push_back(je);
  }
  j["estimators"] = ests;
  if (!r.consistency.empty()) {
    Json runs = Json::array();
    std::size_t counts[3] = {0, 0, 0};
    for (const auto& run : r.consistency) {
      runs.push_back(to_json(run.report));
      ++counts[static_cast<int>(run.report.verdict)];
    }
    j["consistency"] = {{"runs", runs},
                        {"verdict_counts",
                         {{to_string(Verdict::NoEvidenceOfInconsistency), counts[0]},
                          {to_string(Verdict::InconsistentJoint), counts[1]},
                          {to_string(Verdict::InconsistentComponents), counts[2]}}}};
  }
  if (include_timing) j["timing"] = {{"seconds", r.seconds}, {"workers", r.workers}};
  return j;
}

/// Flat table, one row per estimator x parameter.
inline std::string study_csv(const StudyReport& r) {
  std::string out = "experiment,estimator,parameter,truth,mean,variance,bias,se_of_mean,coverage,joint_coverage\n";
  for (const auto& e : r.estimators) {
    for (const auto& p : e.params) {
      out += r.config.name + "," + e.estimator + "," + p.name + "," + fmt17(p.truth) + "," + fmt17(p.mean) + "," +
             fmt17(p.variance) + "," + fmt17(p.bias) + "," + fmt17(p.se_of_mean) + "," +
             (p.coverage ? fmt17(*p.coverage) : "") + "," + (e.joint_coverage ? fmt17(*e.joint_coverage) : "") + "\n";
    }
  }
  return out;
}

}  // namespace vmest::harness
