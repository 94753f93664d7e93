#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vmest/vmest.hpp"
#include "vmest/harness/config.hpp"
#include "vmest/harness/csv.hpp"
#include "vmest/harness/json.hpp"
#include "vmest/harness/study.hpp"

using namespace vmest;
using namespace vmest::harness;

namespace {

// Exit codes shared by every subcommand.
constexpr int kOk = 0;
constexpr int kError = 1;
constexpr int kFitFailed = 2;

struct ExitError {
  int code;
  std::string message;
};

ExperimentConfig config_or_default(const std::string& path) {
  if (path.empty()) return ExperimentConfig{};
  auto all = load_config(path);
  return all.front();
}

void emit(const Json& j, const std::string& out) {
  const std::string text = dump17(j) + "\n";
  if (out.empty() || out == "-") {
    std::cout << text;
  } else {
    write_text(out, text);
  }
}

// --theta accepts a JSON array literal, or a path to a JSON file holding an
// array or a fit report with "theta_hat".
Vec parse_theta(const std::string& arg) {
  Json j;
  try {
    j = Json::parse(arg);
  } catch (const Json::exception&) {
    if (!std::filesystem::exists(arg)) {
      throw Error(ErrorKind::InvalidInput, "--theta is neither a JSON array nor a readable file: '" + arg + "'");
    }
    j = read_json_file(arg);
  }
  if (j.is_object()) {
    if (!j.contains("theta_hat")) throw Error(ErrorKind::InvalidInput, "theta JSON object has no theta_hat");
    return vec_from_json(j["theta_hat"], "theta_hat");
  }
  return vec_from_json(j, "theta");
}

models::GlmmRi glmm_model(Eigen::Index p, const ModelConfig& m) {
  return models::GlmmRi(p, m.gva_order, m.marginal_order);
}

Json psi_summary(const std::vector<Vec>& psi) {
  Json out = Json::array();
  if (psi.empty()) return out;
  const Eigen::Index d = psi.front().size();
  for (Eigen::Index k = 0; k < d; ++k) {
    double sum = 0.0, lo = psi.front()(k), hi = lo;
    for (const auto& v : psi) {
      sum += v(k);
      lo = std::min(lo, v(k));
      hi = std::max(hi, v(k));
    }
    out.push_back({{"component", k}, {"mean", sum / static_cast<double>(psi.size())}, {"min", lo}, {"max", hi}});
  }
  return out;
}

template <class M>
Json fit_json(const M& model, const Dataset<typename M::Datum>& data, const FitConfig& fc, const std::string& model_id,
              const std::string& source) {
  FitResult r;
  try {
    r = fit_variational(model, data, fc);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::NoConvergedStart) throw ExitError{kFitFailed, e.what()};
    throw;
  }
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["model"] = model_id;
  j["data"] = source;
  j["n"] = data.n();
  j["theta_hat"] = to_json(r.theta_hat);
  j["criterion_value"] = r.criterion_value;
  j["converged"] = r.converged;
  j["start_index"] = r.start_index;
  j["psi_summary"] = psi_summary(r.psi_hat);
  Json trace = Json::array();
  for (const auto& t : r.trace) trace.push_back({t.iteration, t.criterion, t.gradient_norm});
  j["trace"] = trace;
  j["config_echo"] = to_json(r.config_echo);
  return j;
}

int cmd_fit(const std::string& model_id, const std::string& data_path, const std::string& config_path,
            const std::string& out) {
  const ModelId id = parse_model_id(model_id);
  const ExperimentConfig c = config_or_default(config_path);
  FitConfig fc = c.fit;
  fc.workers = workers_from_env();
  if (id == ModelId::ExpMix) {
    const models::ExpMix model(false, c.model.marginal_order);
    const Dataset data(read_expmix_csv(data_path), data_path);
    emit(fit_json(model, data, fc, model_id, data_path), out);
  } else {
    GlmmData g = read_glmm_csv(data_path);
    const auto model = glmm_model(static_cast<Eigen::Index>(g.covariates.size()), c.model);
    const Dataset data(std::move(g.subjects), data_path);
    emit(fit_json(model, data, fc, model_id, data_path), out);
  }
  return kOk;
}

int cmd_consistency(const std::string& model_id, const std::string& theta_arg, const std::string& from_fit,
                    std::size_t reps, double alpha, std::uint64_t seed, const std::string& template_path,
                    const std::string& config_path, bool gradients, const std::string& out) {
  const ModelId id = parse_model_id(model_id);
  if (theta_arg.empty() == from_fit.empty()) throw Error(ErrorKind::InvalidInput, "give exactly one of --theta and --from-fit");
  const Vec theta = parse_theta(from_fit.empty() ? theta_arg : from_fit);
  const ExperimentConfig c = config_or_default(config_path);
  FitConfig fc = c.fit;
  fc.workers = workers_from_env();
  const RngStream rng(seed, 0);
  Json j;
  if (id == ModelId::ExpMix) {
    const models::ExpMix model(false, c.model.marginal_order);
    std::vector<models::ExpMixDatum> tmpl{{1.0, 1.0}};
    if (!template_path.empty()) tmpl = read_expmix_csv(template_path);
    const Dataset data(std::move(tmpl), template_path);
    j = to_json(assess_consistency(model, theta, data, reps, alpha, rng, fc), gradients);
  } else {
    if (template_path.empty()) throw Error(ErrorKind::InvalidInput, "glmm-ri needs --template (designs to resample)");
    GlmmData g = read_glmm_csv(template_path);
    const auto model = glmm_model(static_cast<Eigen::Index>(g.covariates.size()), c.model);
    const Dataset data(std::move(g.subjects), template_path);
    j = to_json(assess_consistency(model, theta, data, reps, alpha, rng, fc), gradients);
  }
  j["model"] = model_id;
  j["seed"] = seed;
  emit(j, out);
  return kOk;
}

std::string csv_path_for(const std::string& json_path) {
  std::filesystem::path p(json_path);
  p.replace_extension(".csv");
  return p.string();
}

int cmd_study(const std::string& config_path, const std::string& experiment, std::string out, std::string csv,
              bool no_timing) {
  auto all = load_config(config_path);
  std::vector<ExperimentConfig> chosen;
  for (auto& c : all) {
    if (experiment.empty() || c.name == experiment) chosen.push_back(c);
  }
  if (chosen.empty()) throw Error(ErrorKind::InvalidInput, "no experiment named '" + experiment + "' in " + config_path);
  const unsigned workers = workers_from_env();
  std::vector<StudyReport> reports;
  for (const auto& c : chosen) {
    std::cerr << "study " << c.name << ": n=" << c.study.n << " R=" << c.study.replicates << " workers=" << workers
              << (c.study.estimators.empty() ? " (no estimators: diagnostics only)" : "") << "\n";
    reports.push_back(run_study(c, workers));
    std::cerr << "  done in " << reports.back().seconds << " s, " << reports.back().failures.size()
              << " failed replicates\n";
  }
  if (out.empty()) out = chosen.front().study.output;
  Json j;
  std::string table;
  if (reports.size() == 1) {
    j = to_json(reports.front(), !no_timing);
    table = study_csv(reports.front());
  } else {
    j["schema_version"] = kSchemaVersion;
    j["reports"] = Json::array();
    for (const auto& r : reports) {
      j["reports"].push_back(to_json(r, !no_timing));
      const std::string t = study_csv(r);
      table += table.empty() ? t : t.substr(t.find('\n') + 1);
    }
  }
  emit(j, out);
  if (csv.empty() && !out.empty() && out != "-") csv = csv_path_for(out);
  if (!csv.empty()) write_text(csv, table);
  return kOk;
}

int cmd_simulate(const std::string& model_id, const std::string& theta_arg, std::size_t n, std::uint64_t seed,
                 const std::string& out, bool misspecified, const std::string& template_path,
                 const std::string& config_path) {
  const ModelId id = parse_model_id(model_id);
  const Vec theta = parse_theta(theta_arg);
  const ExperimentConfig c = config_or_default(config_path);
  RngStream rng(seed, 0);
  std::string text;
  if (id == ModelId::ExpMix) {
    if (theta.size() != 2) throw Error(ErrorKind::InvalidInput, "expmix theta must have 2 entries");
    const models::ExpMix model(misspecified);
    std::vector<models::ExpMixDatum> xs(n);
    for (auto& x : xs) x = model.simulate(theta, rng);
    text = expmix_csv(xs);
  } else {
    GlmmData g;
    if (!template_path.empty()) {
      g = read_glmm_csv(template_path);
    } else {
      g.covariates = models::synthetic_covariate_names();
      g.subjects = models::synthetic_designs(n, harness::detail::design_options(c.model), rng);
      for (std::size_t i = 0; i < g.subjects.size(); ++i) g.ids.push_back(std::to_string(i + 1));
    }
    const auto p = static_cast<Eigen::Index>(g.covariates.size());
    if (theta.size() != p + 1) {
      throw Error(ErrorKind::InvalidInput, "glmm-ri theta must have " + std::to_string(p + 1) +
                                               " entries (one per covariate plus log sigma^2)");
    }
    const auto model = glmm_model(p, c.model);
    for (auto& s : g.subjects) s = model.simulate(theta, s, rng);
    text = glmm_csv(g);
  }
  if (out.empty() || out == "-") {
    std::cout << text;
  } else {
    write_text(out, text);
  }
  return kOk;
}

template <class M>
Json onestep_json(const M& model, const Vec& theta, const Dataset<typename M::Datum>& data, InformationKind kind,
                  double level) {
  if (theta.size() != model.dim_theta()) {
    throw Error(ErrorKind::InvalidInput, "fit has " + std::to_string(theta.size()) + " parameters but the data need " +
                                             std::to_string(model.dim_theta()));
  }
  OneStepResult r;
  std::vector<Interval> iv;
  try {
    r = one_step(model, theta, data, kind, workers_from_env());
    iv = ml_wald_intervals(r, level);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::InfoSingular) throw ExitError{kFitFailed, e.what()};
    throw;
  }
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["n"] = r.n;
  j["theta_start"] = to_json(r.theta_start);
  j["score"] = to_json(r.score);
  j["information"] = to_json(r.obs_info);
  j["information_kind"] = kind == InformationKind::OuterProduct ? "outer_product" : "negative_hessian";
  j["theta_onestep"] = to_json(r.theta_onestep);
  j["ml_cov"] = to_json(r.ml_cov);
  j["step_norm"] = r.step_norm;
  j["loglik_start"] = r.loglik_start;
  j["loglik_onestep"] = r.loglik_onestep;
  j["level"] = level;
  Json ints = Json::array();
  for (const auto& i : iv) ints.push_back(Json::array({i.lo, i.hi}));
  j["ml_intervals"] = ints;
  return j;
}

int cmd_onestep(const std::string& model_id, const std::string& fit_path, const std::string& data_path,
                const std::string& information, double level, const std::string& config_path, const std::string& out) {
  const ModelId id = parse_model_id(model_id);
  const Json fit = read_json_file(fit_path);
  if (!fit.contains("theta_hat")) throw Error(ErrorKind::InvalidInput, "'" + fit_path + "' has no theta_hat");
  const Vec theta = vec_from_json(fit["theta_hat"], "theta_hat");
  const InformationKind kind =
      information == "negative_hessian" ? InformationKind::NegativeHessian : InformationKind::OuterProduct;
  const ExperimentConfig c = config_or_default(config_path);
  Json j;
  if (id == ModelId::ExpMix) {
    const models::ExpMix model(false, c.model.marginal_order);
    j = onestep_json(model, theta, Dataset(read_expmix_csv(data_path), data_path), kind, level);
  } else {
    GlmmData g = read_glmm_csv(data_path);
    const auto model = glmm_model(static_cast<Eigen::Index>(g.covariates.size()), c.model);
    j = onestep_json(model, theta, Dataset(std::move(g.subjects), data_path), kind, level);
  }
  emit(j, out);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variational M-estimation: fits, sandwich inference, diagnostics and studies"};
  app.require_subcommand(1);
  const std::vector<std::string> models_allowed{"expmix", "glmm-ri"};

  std::string model, data, config, out, theta, from_fit, tmpl, experiment, csv, fit_path, information = "outer_product";
  std::size_t reps = 10000, n = 100;
  double alpha = 0.01, level = 0.95;
  std::uint64_t seed = 1;
  bool gradients = false, no_timing = false, misspecified = false;

  auto* fit = app.add_subcommand("fit", "Fit the variational estimator to a data CSV");
  fit->add_option("--model", model)->required()->check(CLI::IsMember(models_allowed));
  fit->add_option("--data", data, "Data CSV")->required();
  fit->add_option("--config", config, "TOML config ([fit] and [model] tables are used)");
  fit->add_option("--out", out, "Output JSON (stdout when absent)");

  auto* diag = app.add_subcommand("diagnose-consistency", "Simulation test of a zero mean criterion gradient");
  diag->add_option("--model", model)->required()->check(CLI::IsMember(models_allowed));
  diag->add_option("--theta", theta, "JSON array, or a JSON file");
  diag->add_option("--from-fit", from_fit, "Fit JSON whose theta_hat is used");
  diag->add_option("--reps", reps, "Simulated replicates B");
  diag->add_option("--alpha", alpha);
  diag->add_option("--seed", seed);
  diag->add_option("--template", tmpl, "Data CSV whose datums serve as simulation templates");
  diag->add_option("--config", config);
  diag->add_flag("--gradients", gradients, "Include the B x d gradient matrix");
  diag->add_option("--out", out);

  auto* study = app.add_subcommand("study", "Run the simulation studies of a config");
  study->add_option("--config", config)->required();
  study->add_option("--experiment", experiment, "Run only this experiment");
  study->add_option("--out", out, "Report JSON (default: study.output)");
  study->add_option("--csv", csv, "Flat table (default: report path with .csv)");
  study->add_flag("--no-timing", no_timing, "Leave timing out of the report");

  auto* sim = app.add_subcommand("simulate", "Simulate a data CSV");
  sim->add_option("--model", model)->required()->check(CLI::IsMember(models_allowed));
  sim->add_option("--theta", theta)->required();
  sim->add_option("--n", n, "Datums (subjects for glmm-ri without a template)");
  sim->add_option("--seed", seed);
  sim->add_option("--out", out);
  sim->add_flag("--misspecified", misspecified, "expmix: draw x1 from Gamma(3, 3 lambda1)");
  sim->add_option("--template", tmpl, "glmm-ri: reuse the designs of this CSV");
  sim->add_option("--config", config);

  auto* os = app.add_subcommand("onestep", "One-step correction of a fit toward the MLE");
  os->add_option("--model", model)->required()->check(CLI::IsMember(models_allowed));
  os->add_option("--fit", fit_path, "Fit JSON")->required();
  os->add_option("--data", data)->required();
  os->add_option("--information", information)->check(CLI::IsMember({"outer_product", "negative_hessian"}));
  os->add_option("--level", level);
  os->add_option("--config", config);
  os->add_option("--out", out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kError;
  }

  try {
    if (*fit) return cmd_fit(model, data, config, out);
    if (*diag) return cmd_consistency(model, theta, from_fit, reps, alpha, seed, tmpl, config, gradients, out);
    if (*study) return cmd_study(config, experiment, out, csv, no_timing);
    if (*sim) return cmd_simulate(model, theta, n, seed, out, misspecified, tmpl, config);
    if (*os) return cmd_onestep(model, fit_path, data, information, level, config, out);
  } catch (const ExitError& e) {
    std::cerr << "error: " << e.message << "\n";
    return e.code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kError;
  }
  return kError;
}
