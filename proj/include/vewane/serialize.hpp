#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "vewane/error.hpp"
#include "vewane/mc_study.hpp"
#include "vewane/nuisance.hpp"
#include "vewane/pipeline.hpp"
#include "vewane/simulation.hpp"
#include "vewane/solver.hpp"
#include "vewane/timeline.hpp"
#include "vewane/waning.hpp"

namespace vewane {

using Json = nlohmann::json;

inline constexpr int kNuisanceFormatVersion = 1;
inline constexpr int kResultFormatVersion = 1;
inline constexpr int kSummaryFormatVersion = 1;

namespace detail {

inline Json vector_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Vector vector_from_json(const Json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline Json matrix_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vector_json(m.row(r).transpose()));
  return rows;
}

inline Json step_json(const StepFunction& f) { return {{"times", f.times}, {"values", f.values}}; }

inline StepFunction step_from_json(const Json& j) {
  StepFunction f;
  f.times = j.at("times").get<std::vector<double>>();
  f.values = j.at("values").get<std::vector<double>>();
  if (f.times.size() != f.values.size()) throw ValidationError("step function times and values differ in length");
  return f;
}

// JSON has no infinities; unbounded window ends are written as null.
inline Json bound_json(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }
inline double bound_from_json(const Json& j, double if_null) { return j.is_null() ? if_null : j.get<double>(); }

// NaN is written as null by the serializer.
inline double number_or_nan(const Json& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

inline Json hazard_json(const HazardModel& m) {
  const auto& f = m.fit;
  return {{"design", {{"include_arm", m.design.include_arm}, {"arm_interactions", m.design.arm_interactions}}},
          {"beta", vector_json(f.beta)},
          {"center", vector_json(f.center)},
          {"baseline", step_json(f.baseline_cumhaz)},
          {"window", {bound_json(f.window_lo), bound_json(f.window_hi)}},
          {"loglik", f.loglik},
          {"iterations", f.iterations},
          {"n_events", f.n_events}};
}

inline HazardModel hazard_from_json(const Json& j) {
  HazardModel m;
  m.design.include_arm = j.at("design").at("include_arm").get<bool>();
  m.design.arm_interactions = j.at("design").at("arm_interactions").get<bool>();
  m.fit.beta = vector_from_json(j.at("beta"));
  m.fit.center = vector_from_json(j.at("center"));
  if (m.fit.beta.size() != m.fit.center.size()) throw ValidationError("hazard model beta and center differ in length");
  m.fit.baseline_cumhaz = step_from_json(j.at("baseline"));
  m.fit.window_lo = bound_from_json(j.at("window").at(0), -std::numeric_limits<double>::infinity());
  m.fit.window_hi = bound_from_json(j.at("window").at(1), std::numeric_limits<double>::infinity());
  m.fit.loglik = j.value("loglik", 0.0);
  m.fit.iterations = j.value("iterations", 0);
  m.fit.n_events = j.value("n_events", 0);
  return m;
}

}  // namespace detail

inline Json to_json(const TrialTimeline& tl) {
  return {{"t_accrual", tl.t_accrual}, {"t_pfizer", tl.t_pfizer},     {"t_pdcv_start", tl.t_pdcv_start},
          {"t_pdcv_end", tl.t_pdcv_end}, {"t_analysis", tl.t_analysis}, {"lag", tl.lag},
          {"p_assign", tl.p_assign}};
}

/// Missing keys keep the values of `base`; unknown keys are rejected.
inline TrialTimeline timeline_from_json(const Json& j, TrialTimeline base = {}) {
  for (const auto& [k, v] : j.items()) {
    if (k == "t_accrual") base.t_accrual = v.get<double>();
    else if (k == "t_pfizer") base.t_pfizer = v.get<double>();
    else if (k == "t_pdcv_start") base.t_pdcv_start = v.get<double>();
    else if (k == "t_pdcv_end") base.t_pdcv_end = v.get<double>();
    else if (k == "t_analysis") base.t_analysis = v.get<double>();
    else if (k == "lag") base.lag = v.get<double>();
    else if (k == "p_assign") base.p_assign = v.get<double>();
    else throw InvalidArgument("unknown timeline key '" + k + "'");
  }
  base.validate();
  return base;
}

inline Json to_json(const WaningModelSpec& spec) {
  if (spec.is_piecewise()) return {{"kind", "piecewise"}, {"knots", spec.knots()}};
  return {{"kind", "linear"}};
}

inline WaningModelSpec waning_from_json(const Json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "linear") return WaningModelSpec::linear();
  if (kind == "piecewise") return WaningModelSpec::piecewise(j.at("knots").get<std::vector<double>>());
  throw InvalidArgument("waning kind must be 'linear' or 'piecewise'");
}

// ---------------------------------------------------------------------------
// Nuisance fits

inline Json to_json(const NuisanceFit& f) {
  const auto& a = f.logit_psi;
  return {{"format", "ve-wane-nuisance"},
          {"version", kNuisanceFormatVersion},
          {"timeline", to_json(f.timeline)},
          {"x_ref", f.x_ref},
          {"unblinding_request", detail::hazard_json(f.cox_r1)},
          {"unblinding_pdcv", detail::hazard_json(f.cox_r2)},
          {"entry", detail::hazard_json(f.cox_entry)},
          {"agreement",
           {{"n_covariates", a.n_cov},
            {"strata_present", {a.stratum_present[0], a.stratum_present[1]}},
            {"coef", detail::vector_json(a.fit.coef)},
            {"loglik", a.fit.loglik},
            {"iterations", a.fit.iterations}}}};
}

inline NuisanceFit nuisance_from_json(const Json& j) {
  if (j.value("format", "") != "ve-wane-nuisance") throw ValidationError("not a nuisance-fit document");
  const int version = j.at("version").get<int>();
  if (version != kNuisanceFormatVersion) {
    throw ValidationError("unsupported nuisance-fit version " + std::to_string(version));
  }
  NuisanceFit f;
  f.timeline = timeline_from_json(j.at("timeline"));
  f.x_ref = j.at("x_ref").get<std::vector<double>>();
  f.cox_r1 = detail::hazard_from_json(j.at("unblinding_request"));
  f.cox_r2 = detail::hazard_from_json(j.at("unblinding_pdcv"));
  f.cox_entry = detail::hazard_from_json(j.at("entry"));
  const Json& a = j.at("agreement");
  f.logit_psi.n_cov = a.at("n_covariates").get<int>();
  f.logit_psi.stratum_present[0] = a.at("strata_present").at(0).get<bool>();
  f.logit_psi.stratum_present[1] = a.at("strata_present").at(1).get<bool>();
  f.logit_psi.fit.coef = detail::vector_from_json(a.at("coef"));
  f.logit_psi.fit.loglik = a.value("loglik", 0.0);
  f.logit_psi.fit.iterations = a.value("iterations", 0);
  return f;
}

// ---------------------------------------------------------------------------
// Estimation results

inline Json to_json(const EstimationResult& r) {
  Json ve = Json::array();
  for (const auto& v : r.ve_estimates) {
    ve.push_back({{"tau", v.tau}, {"point", v.point}, {"se", v.se}, {"lower", v.lower}, {"upper", v.upper}});
  }
  Json trace = Json::array();
  for (const auto& t : r.trace) {
    trace.push_back({{"iteration", t.iteration}, {"ef_norm", t.ef_norm}, {"theta", detail::vector_json(t.theta)}});
  }
  const auto& w = r.wald_waning;
  return {{"format", "ve-wane-result"},
          {"version", kResultFormatVersion},
          {"waning", to_json(r.spec)},
          {"lag", r.lag},
          {"theta", {{"theta0", r.theta_hat.theta0}, {"theta1", detail::vector_json(r.theta_hat.theta1)}}},
          {"covariance", detail::matrix_json(r.cov)},
          {"se", detail::vector_json(r.se())},
          {"ve", ve},
          {"waning_test",
           {{"coordinate", w.coordinate},
            {"statistic", w.statistic},
            {"p_value", w.p_value},
            {"alpha", w.alpha},
            {"reject", w.reject}}},
          {"converged", r.converged},
          {"iterations", r.iterations},
          {"trace", trace},
          {"jumps", {{"blinded", r.n_jumps_b}, {"unblinded", r.n_jumps_u}}},
          {"cumhaz_blinded", detail::step_json(r.cumhaz_b)},
          {"cumhaz_unblinded", detail::step_json(r.cumhaz_u)}};
}

inline Json to_json(const WeightDiagnostics& d) {
  Json top = Json::array();
  for (const auto& w : d.largest) top.push_back({{"index", w.index}, {"process", w.process}, {"weight", w.weight}});
  return {{"largest", top},
          {"ess_blinded", d.ess_blinded},
          {"ess_unblinded", d.ess_unblinded},
          {"n_blinded", d.n_blinded},
          {"n_unblinded", d.n_unblinded},
          {"min_weight", d.min_weight},
          {"max_weight", d.max_weight}};
}

inline Json to_json(const AnalysisOutput& a, WeightMode mode) {
  Json j = to_json(a.result);
  j["weights"] = weight_mode_name(mode);
  j["weight_diagnostics"] = to_json(a.diagnostics);
  j["sandwich_covariance"] = detail::matrix_json(a.sandwich_cov);
  if (a.bootstrap_failures) j["bootstrap_failures"] = a.bootstrap_failures;
  if (a.nuisance) j["nuisance"] = to_json(*a.nuisance);
  return j;
}

// ---------------------------------------------------------------------------
// Monte Carlo summaries

inline Json to_json(const MonteCarloSummary& s) {
  Json blocks = Json::array();
  for (const auto& b : s.blocks) {
    Json est = Json::array();
    for (const auto& e : b.estimands) {
      est.push_back({{"name", e.name},
                     {"truth", e.truth},
                     {"n", e.n},
                     {"mean", e.mean},
                     {"median", e.median},
                     {"sd", e.sd ? Json(*e.sd) : Json(nullptr)},
                     {"se", e.mean_se},
                     {"coverage", e.coverage}});
    }
    blocks.push_back({{"weights", weight_mode_name(b.mode)},
                      {"successes", b.successes},
                      {"failures", b.failures},
                      {"rejection_rate", b.rejection_rate},
                      {"type1_error", b.type1_error ? Json(*b.type1_error) : Json(nullptr)},
                      {"estimands", est}});
  }
  return {{"format", "ve-wane-summary"}, {"version", kSummaryFormatVersion},
          {"scenario", s.scenario},      {"replications", s.replications},
          {"seed", s.seed},              {"n_subjects", s.n_subjects},
          {"alpha", s.alpha},            {"blocks", blocks}};
}

inline MonteCarloSummary summary_from_json(const Json& j) {
  if (j.value("format", "") != "ve-wane-summary") throw ValidationError("not a summary document");
  MonteCarloSummary s;
  s.scenario = j.at("scenario").get<std::string>();
  s.replications = j.at("replications").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.n_subjects = j.at("n_subjects").get<std::size_t>();
  s.alpha = j.at("alpha").get<double>();
  for (const auto& bj : j.at("blocks")) {
    WeightModeSummary b;
    b.mode = parse_weight_mode(bj.at("weights").get<std::string>());
    b.successes = bj.at("successes").get<int>();
    b.failures = bj.at("failures").get<int>();
    b.rejection_rate = bj.at("rejection_rate").get<double>();
    if (!bj.at("type1_error").is_null()) b.type1_error = bj.at("type1_error").get<double>();
    for (const auto& ej : bj.at("estimands")) {
      EstimandSummary e;
      e.name = ej.at("name").get<std::string>();
      e.truth = ej.at("truth").get<double>();
      e.n = ej.at("n").get<int>();
      e.mean = detail::number_or_nan(ej.at("mean"));
      e.median = detail::number_or_nan(ej.at("median"));
      if (!ej.at("sd").is_null()) e.sd = ej.at("sd").get<double>();
      e.mean_se = detail::number_or_nan(ej.at("se"));
      e.coverage = ej.at("coverage").get<double>();
      b.estimands.push_back(e);
    }
    s.blocks.push_back(b);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Scenario configuration

inline Json to_json(const ScenarioConfig& c) {
  return {{"name", c.name},
          {"n", c.n},
          {"timeline", to_json(c.timeline)},
          {"waning", to_json(c.waning)},
          {"theta0", c.theta0},
          {"theta1", detail::vector_json(c.theta1)},
          {"p_x1", c.p_x1},
          {"mu_x2", c.mu_x2},
          {"sd_x2", c.sd_x2},
          {"beta_request", c.beta_request},
          {"gamma_agree", c.gamma_agree},
          {"delta_infect", c.delta_infect},
          {"frailty_var", c.frailty_var},
          {"lambda_u_multiplier", c.lambda_u_multiplier},
          {"lambda_lag_multiplier", c.lambda_lag_multiplier},
          {"unblinded_rate_protected", c.unblinded_rate_protected},
          {"patient_scale_comparison", c.patient_scale_comparison},
          {"seed", c.seed}};
}

/// Applies the keys of `j` on top of `base` (a preset or the defaults).
inline ScenarioConfig scenario_from_json(const Json& j, ScenarioConfig base = {}) {
  for (const auto& [k, v] : j.items()) {
    if (k == "name") base.name = v.get<std::string>();
    else if (k == "preset") continue;
    else if (k == "n") base.n = v.get<std::size_t>();
    else if (k == "timeline") base.timeline = timeline_from_json(v, base.timeline);
    else if (k == "waning") base.waning = waning_from_json(v);
    else if (k == "theta0") base.theta0 = v.get<double>();
    else if (k == "theta1") base.theta1 = v.is_array() ? detail::vector_from_json(v) : Vector::Constant(1, v.get<double>());
    else if (k == "p_x1") base.p_x1 = v.get<double>();
    else if (k == "mu_x2") base.mu_x2 = v.get<double>();
    else if (k == "sd_x2") base.sd_x2 = v.get<double>();
    else if (k == "beta_request") base.beta_request = v.get<std::array<double, 5>>();
    else if (k == "gamma_agree") base.gamma_agree = v.get<std::array<double, 4>>();
    else if (k == "delta_infect") base.delta_infect = v.get<std::array<double, 3>>();
    else if (k == "frailty_var") base.frailty_var = v.get<double>();
    else if (k == "lambda_u_multiplier") base.lambda_u_multiplier = v.get<double>();
    else if (k == "lambda_lag_multiplier") base.lambda_lag_multiplier = v.get<double>();
    else if (k == "unblinded_rate_protected") base.unblinded_rate_protected = v.get<bool>();
    else if (k == "patient_scale_comparison") base.patient_scale_comparison = v.get<bool>();
    else if (k == "seed") base.seed = v.get<std::uint64_t>();
    else throw InvalidArgument("unknown scenario key '" + k + "'");
  }
  base.validate();
  return base;
}

}  // namespace vewane
