#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#define TOML_EXCEPTIONS 1
#include <toml.hpp>

#include "vmest/core/profile.hpp"
#include "vmest/harness/json.hpp"

namespace vmest::harness {

enum class ModelId { ExpMix, GlmmRi };

inline const char* to_string(ModelId m) { return m == ModelId::ExpMix ? "expmix" : "glmm-ri"; }

inline ModelId parse_model_id(const std::string& s) {
  if (s == "expmix") return ModelId::ExpMix;
  if (s == "glmm-ri") return ModelId::GlmmRi;
  throw Error(ErrorKind::InvalidInput, "unknown model id '" + s + "' (expected expmix or glmm-ri)");
}

struct ModelConfig {
  std::optional<ModelId> id;
  std::optional<Vec> theta;
  bool misspecified = false;
  int gva_order = 20;
  int marginal_order = 30;
  // Synthetic GLMM designs.
  int visits = 6;
  int min_age = 12;
  int max_age = 35;
};

struct StudyConfig {
  std::size_t n = 1000;
  std::size_t replicates = 500;
  std::uint64_t seed = 20240101;
  std::vector<std::string> estimators{"variational"};
  double level = 0.95;
  std::string output;
  int vb_iters = 1000;
  double max_failure_fraction = 0.01;
};

struct DiagnosticsConfig {
  bool consistency = false;
  std::size_t reps = 10000;
  std::size_t runs = 1;
  double alpha = 0.01;
  /// "truth" or "fitted" (a variational fit to a pilot data set simulated
  /// at the true theta).
  std::string theta_star = "truth";
  bool tolerant = false;
  /// "outer_product" or "negative_hessian".
  std::string information = "outer_product";
};

struct ExperimentConfig {
  std::string name = "experiment";
  ModelConfig model;
  StudyConfig study;
  FitConfig fit;
  DiagnosticsConfig diagnostics;
  /// Free-form record of full-scale settings; echoed, never used.
  Json paper_scale;
};

inline const std::set<std::string> kEstimators{"variational", "vb", "onestep", "direct_mle"};

namespace detail {

inline void check_keys(const toml::table& t, const std::set<std::string>& allowed, const std::string& where) {
  for (auto&& [k, v] : t) {
    (void)v;
    if (!allowed.count(std::string(k.str()))) {
      throw Error(ErrorKind::InvalidInput, "unknown key '" + std::string(k.str()) + "' in " + where);
    }
  }
}

inline const toml::table* subtable(const toml::table& t, const char* key, const std::string& where) {
  const toml::node* n = t.get(key);
  if (!n) return nullptr;
  if (!n->is_table()) throw Error(ErrorKind::InvalidInput, where + "." + key + " must be a table");
  return n->as_table();
}

inline double get_real(const toml::table& t, const char* key, double def, const std::string& where) {
  const toml::node* n = t.get(key);
  if (!n) return def;
  if (auto v = n->value<double>()) return *v;
  throw Error(ErrorKind::InvalidInput, where + "." + key + " must be a number");
}

inline std::int64_t get_int(const toml::table& t, const char* key, std::int64_t def, const std::string& where) {
  const toml::node* n = t.get(key);
  if (!n) return def;
  if (!n->is_integer()) throw Error(ErrorKind::InvalidInput, where + "." + key + " must be an integer");
  return *n->value<std::int64_t>();
}

inline std::size_t get_count(const toml::table& t, const char* key, std::size_t def, const std::string& where) {
  const std::int64_t v = get_int(t, key, static_cast<std::int64_t>(def), where);
  if (v < 0) throw Error(ErrorKind::InvalidInput, where + "." + key + " must be non-negative");
  return static_cast<std::size_t>(v);
}

inline bool get_bool(const toml::table& t, const char* key, bool def, const std::string& where) {
  const toml::node* n = t.get(key);
  if (!n) return def;
  if (auto v = n->value<bool>()) return *v;
  throw Error(ErrorKind::InvalidInput, where + "." + key + " must be true or false");
}

inline std::string get_string(const toml::table& t, const char* key, const std::string& def, const std::string& where) {
  const toml::node* n = t.get(key);
  if (!n) return def;
  if (auto v = n->value<std::string>()) return *v;
  throw Error(ErrorKind::InvalidInput, where + "." + key + " must be a string");
}

inline Json toml_to_json(const toml::node& n) {
  if (auto t = n.as_table()) {
    Json j = Json::object();
    for (auto&& [k, v] : *t) j[std::string(k.str())] = toml_to_json(v);
    return j;
  }
  if (auto a = n.as_array()) {
    Json j = Json::array();
    for (auto&& v : *a) j.push_back(toml_to_json(v));
    return j;
  }
  if (n.is_integer()) return *n.value<std::int64_t>();
  if (n.is_floating_point()) return *n.value<double>();
  if (n.is_boolean()) return *n.value<bool>();
  if (n.is_string()) return *n.value<std::string>();
  return Json();
}

inline void parse_fit(const toml::table& t, FitConfig& f, const std::string& where) {
  check_keys(t, {"inner_tol", "outer_tol", "max_inner_iter", "max_outer_iter", "multistart_count", "jitter_sd", "seed", "mode"}, where);
  f.inner_tol = get_real(t, "inner_tol", f.inner_tol, where);
  f.outer_tol = get_real(t, "outer_tol", f.outer_tol, where);
  f.max_inner_iter = static_cast<int>(get_int(t, "max_inner_iter", f.max_inner_iter, where));
  f.max_outer_iter = static_cast<int>(get_int(t, "max_outer_iter", f.max_outer_iter, where));
  f.multistart_count = static_cast<int>(get_int(t, "multistart_count", f.multistart_count, where));
  f.jitter_sd = get_real(t, "jitter_sd", f.jitter_sd, where);
  f.seed = static_cast<std::uint64_t>(get_int(t, "seed", static_cast<std::int64_t>(f.seed), where));
  const std::string mode = get_string(t, "mode", "quasi_newton", where);
  if (mode == "quasi_newton") {
    f.mode = FitMode::QuasiNewton;
  } else if (mode == "newton") {
    f.mode = FitMode::Newton;
  } else if (mode == "alternating") {
    f.mode = FitMode::Alternating;
  } else {
    throw Error(ErrorKind::InvalidInput, where + ".mode must be quasi_newton, newton or alternating");
  }
  f.validate();
}

inline ExperimentConfig parse_experiment(const toml::table& root, const std::string& name, const std::string& where) {
  ExperimentConfig c;
  c.name = name;
  check_keys(root, {"model", "study", "fit", "diagnostics", "paper_scale"}, where);
  if (auto t = subtable(root, "model", where)) {
    const std::string w = where + "[model]";
    check_keys(*t, {"id", "theta", "misspecified", "gva_order", "marginal_order", "visits", "min_age", "max_age"}, w);
    if (t->get("id")) c.model.id = parse_model_id(get_string(*t, "id", "", w));
    if (const toml::node* th = t->get("theta")) {
      if (!th->is_array()) throw Error(ErrorKind::InvalidInput, w + ".theta must be an array");
      const auto& arr = *th->as_array();
      Vec v(static_cast<Eigen::Index>(arr.size()));
      for (std::size_t i = 0; i < arr.size(); ++i) {
        auto x = arr[i].value<double>();
        if (!x) throw Error(ErrorKind::InvalidInput, w + ".theta must contain numbers");
        v(static_cast<Eigen::Index>(i)) = *x;
      }
      c.model.theta = v;
    }
    c.model.misspecified = get_bool(*t, "misspecified", false, w);
    c.model.gva_order = static_cast<int>(get_int(*t, "gva_order", c.model.gva_order, w));
    c.model.marginal_order = static_cast<int>(get_int(*t, "marginal_order", c.model.marginal_order, w));
    c.model.visits = static_cast<int>(get_int(*t, "visits", c.model.visits, w));
    c.model.min_age = static_cast<int>(get_int(*t, "min_age", c.model.min_age, w));
    c.model.max_age = static_cast<int>(get_int(*t, "max_age", c.model.max_age, w));
  }
  if (auto t = subtable(root, "study", where)) {
    const std::string w = where + "[study]";
    check_keys(*t, {"n", "replicates", "seed", "estimators", "level", "output", "vb_iters", "max_failure_fraction"}, w);
    c.study.n = get_count(*t, "n", c.study.n, w);
    c.study.replicates = get_count(*t, "replicates", c.study.replicates, w);
    c.study.seed = static_cast<std::uint64_t>(get_int(*t, "seed", static_cast<std::int64_t>(c.study.seed), w));
    if (const toml::node* e = t->get("estimators")) {
      if (!e->is_array()) throw Error(ErrorKind::InvalidInput, w + ".estimators must be an array of strings");
      c.study.estimators.clear();
      for (auto&& x : *e->as_array()) {
        auto s = x.value<std::string>();
        if (!s || !kEstimators.count(*s)) {
          throw Error(ErrorKind::InvalidInput, w + ".estimators entries must be variational, vb, onestep or direct_mle");
        }
        c.study.estimators.push_back(*s);
      }
    }
    c.study.level = get_real(*t, "level", c.study.level, w);
    c.study.output = get_string(*t, "output", c.study.output, w);
    c.study.vb_iters = static_cast<int>(get_int(*t, "vb_iters", c.study.vb_iters, w));
    c.study.max_failure_fraction = get_real(*t, "max_failure_fraction", c.study.max_failure_fraction, w);
  }
  if (auto t = subtable(root, "fit", where)) parse_fit(*t, c.fit, where + "[fit]");
  if (auto t = subtable(root, "diagnostics", where)) {
    const std::string w = where + "[diagnostics]";
    check_keys(*t, {"consistency", "reps", "runs", "alpha", "theta_star", "tolerant", "information"}, w);
    c.diagnostics.consistency = get_bool(*t, "consistency", c.diagnostics.consistency, w);
    c.diagnostics.reps = get_count(*t, "reps", c.diagnostics.reps, w);
    c.diagnostics.runs = get_count(*t, "runs", c.diagnostics.runs, w);
    c.diagnostics.alpha = get_real(*t, "alpha", c.diagnostics.alpha, w);
    c.diagnostics.theta_star = get_string(*t, "theta_star", c.diagnostics.theta_star, w);
    if (c.diagnostics.theta_star != "truth" && c.diagnostics.theta_star != "fitted") {
      throw Error(ErrorKind::InvalidInput, w + ".theta_star must be truth or fitted");
    }
    c.diagnostics.tolerant = get_bool(*t, "tolerant", c.diagnostics.tolerant, w);
    c.diagnostics.information = get_string(*t, "information", c.diagnostics.information, w);
    if (c.diagnostics.information != "outer_product" && c.diagnostics.information != "negative_hessian") {
      throw Error(ErrorKind::InvalidInput, w + ".information must be outer_product or negative_hessian");
    }
  }
  if (const toml::node* p = root.get("paper_scale")) c.paper_scale = toml_to_json(*p);
  return c;
}

}  // namespace detail

/// Parses a config. A file holds either one experiment (tables [model],
/// [study], [fit], [diagnostics]) or several under [experiments.<name>],
/// returned in name order.
inline std::vector<ExperimentConfig> parse_config(const std::string& text, const std::string& source) {
  toml::table root;
  try {
    root = toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    throw Error(ErrorKind::InvalidInput, "'" + source + "': " + std::string(e.description()));
  }
  std::vector<ExperimentConfig> out;
  if (const toml::node* ex = root.get("experiments")) {
    detail::check_keys(root, {"experiments"}, "'" + source + "'");
    if (!ex->is_table()) throw Error(ErrorKind::InvalidInput, "experiments must be a table of named experiments");
    for (auto&& [k, v] : *ex->as_table()) {
      const std::string name(k.str());
      if (!v.is_table()) throw Error(ErrorKind::InvalidInput, "experiments." + name + " must be a table");
      out.push_back(detail::parse_experiment(*v.as_table(), name, "experiments." + name));
    }
  } else {
    std::string name = std::filesystem::path(source).stem().string();
    if (name.empty()) name = "experiment";
    out.push_back(detail::parse_experiment(root, name, "'" + source + "'"));
  }
  return out;
}

inline std::vector<ExperimentConfig> load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

inline const char* to_string(FitMode m) {
  switch (m) {
    case FitMode::QuasiNewton: return "quasi_newton";
    case FitMode::Newton: return "newton";
    case FitMode::Alternating: return "alternating";
  }
  return "unknown";
}

inline Json to_json(const FitConfig& f) {
  Json j;
  j["inner_tol"] = f.inner_tol;
  j["outer_tol"] = f.outer_tol;
  j["max_inner_iter"] = f.max_inner_iter;
  j["max_outer_iter"] = f.max_outer_iter;
  j["multistart_count"] = f.multistart_count;
  j["jitter_sd"] = f.jitter_sd;
  j["seed"] = f.seed;
  j["mode"] = to_string(f.mode);
  return j;
}

inline Json to_json(const ExperimentConfig& c) {
  Json j;
  j["name"] = c.name;
  Json m;
  m["id"] = c.model.id ? to_string(*c.model.id) : "";
  m["theta"] = c.model.theta ? to_json(*c.model.theta) : Json::array();
  m["misspecified"] = c.model.misspecified;
  m["gva_order"] = c.model.gva_order;
  m["marginal_order"] = c.model.marginal_order;
  m["visits"] = c.model.visits;
  m["min_age"] = c.model.min_age;
  m["max_age"] = c.model.max_age;
  j["model"] = m;
  Json s;
  s["n"] = c.study.n;
  s["replicates"] = c.study.replicates;
  s["seed"] = c.study.seed;
  s["estimators"] = c.study.estimators;
  s["level"] = c.study.level;
  s["vb_iters"] = c.study.vb_iters;
  s["max_failure_fraction"] = c.study.max_failure_fraction;
  j["study"] = s;
  j["fit"] = to_json(c.fit);
  Json d;
  d["consistency"] = c.diagnostics.consistency;
  d["reps"] = c.diagnostics.reps;
  d["runs"] = c.diagnostics.runs;
  d["alpha"] = c.diagnostics.alpha;
  d["theta_star"] = c.diagnostics.theta_star;
  d["tolerant"] = c.diagnostics.tolerant;
  d["information"] = c.diagnostics.information;
  j["diagnostics"] = d;
  if (!c.paper_scale.is_null()) j["paper_scale"] = c.paper_scale;
  return j;
}

}  // namespace vmest::harness
