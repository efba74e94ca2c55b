#include <cmath>
#include <fstream>
#include <string>

#include <gtest/gtest.h>

#include "vewane/serialize.hpp"

using namespace vewane;

namespace {

// Small validator for the keywords the shipped schema uses.
std::string validate(const Json& v, const Json& s, const std::string& path = "$") {
  auto type_ok = [&](const std::string& t) {
    if (t == "object") return v.is_object();
    if (t == "array") return v.is_array();
    if (t == "string") return v.is_string();
    if (t == "integer") return v.is_number_integer();
    if (t == "number") return v.is_number();
    if (t == "boolean") return v.is_boolean();
    if (t == "null") return v.is_null();
    return false;
  };
  if (s.contains("type")) {
    bool ok = false;
    if (s["type"].is_array()) {
      for (const auto& t : s["type"]) ok = ok || type_ok(t.get<std::string>());
    } else {
      ok = type_ok(s["type"].get<std::string>());
    }
    if (!ok) return path + ": wrong type";
  }
  if (s.contains("const") && v != s["const"]) return path + ": const mismatch";
  if (s.contains("enum")) {
    bool found = false;
    for (const auto& e : s["enum"]) found = found || e == v;
    if (!found) return path + ": not in enum";
  }
  if (v.is_number()) {
    const double x = v.get<double>();
    if (s.contains("minimum") && x < s["minimum"].get<double>()) return path + ": below minimum";
    if (s.contains("maximum") && x > s["maximum"].get<double>()) return path + ": above maximum";
    if (s.contains("exclusiveMinimum") && x <= s["exclusiveMinimum"].get<double>()) return path + ": below minimum";
    if (s.contains("exclusiveMaximum") && x >= s["exclusiveMaximum"].get<double>()) return path + ": above maximum";
  }
  if (v.is_object()) {
    for (const auto& r : s.value("required", Json::array())) {
      if (!v.contains(r.get<std::string>())) return path + ": missing " + r.get<std::string>();
    }
    const Json props = s.value("properties", Json::object());
    for (const auto& [k, child] : v.items()) {
      if (props.contains(k)) {
        auto err = validate(child, props[k], path + "." + k);
        if (!err.empty()) return err;
      } else if (s.value("additionalProperties", true) == false) {
        return path + ": unexpected key " + k;
      }
    }
  }
  if (v.is_array()) {
    if (s.contains("minItems") && v.size() < s["minItems"].get<std::size_t>()) return path + ": too few items";
    if (s.contains("maxItems") && v.size() > s["maxItems"].get<std::size_t>()) return path + ": too many items";
    if (s.contains("items")) {
      for (std::size_t i = 0; i < v.size(); ++i) {
        auto err = validate(v[i], s["items"], path + "[" + std::to_string(i) + "]");
        if (!err.empty()) return err;
      }
    }
  }
  return "";
}

Json load_schema() {
  std::ifstream in(std::string(VEWANE_SCHEMA_DIR) + "/summary.schema.json");
  EXPECT_TRUE(in.good());
  return Json::parse(in);
}

MonteCarloSummary sample_summary() {
  MonteCarloSummary s;
  s.scenario = "ii-b";
  s.replications = 4;
  s.seed = 7;
  s.n_subjects = 1000;
  s.alpha = 0.05;
  for (auto mode : {WeightMode::Unit, WeightMode::Estimated}) {
    WeightModeSummary b;
    b.mode = mode;
    b.successes = 3;
    b.failures = 1;
    b.rejection_rate = 1.0 / 3;
    b.type1_error = 1.0 / 3;
    for (int k = 0; k < 3; ++k) {
      EstimandSummary e;
      e.name = k == 0 ? "theta1" : (k == 1 ? "VE_le_20" : "VE_gt_20");
      e.truth = k == 0 ? 0.0 : 0.95;
      e.n = 3;
      e.mean = 0.1 * k + 0.0123456789012345;
      e.median = 0.2 * k;
      e.sd = 0.3 + k;
      e.mean_se = 0.25;
      e.coverage = 2.0 / 3;
      b.estimands.push_back(e);
    }
    s.blocks.push_back(b);
  }
  return s;
}

Dataset small_dataset(const char* preset, std::size_t n) {
  ScenarioConfig c = scenario_preset(preset);
  return generate_dataset(c, n, 11);
}

}  // namespace

TEST(SummaryJson, RoundTripsExactly) {
  const auto s = sample_summary();
  const Json j = Json::parse(to_json(s).dump());
  EXPECT_EQ(summary_from_json(j), s);
}

TEST(SummaryJson, ValidatesAgainstSchema) {
  const Json schema = load_schema();
  EXPECT_EQ(validate(to_json(sample_summary()), schema), "");

  auto single = sample_summary();
  single.replications = 1;
  for (auto& b : single.blocks) {
    b.type1_error.reset();
    for (auto& e : b.estimands) e.sd.reset();
  }
  EXPECT_EQ(validate(to_json(single), schema), "");
}

TEST(SummaryJson, SchemaRejectsBrokenDocuments) {
  const Json schema = load_schema();
  Json j = to_json(sample_summary());
  j["blocks"][0]["estimands"][1]["coverage"] = 1.5;
  EXPECT_NE(validate(j, schema), "");

  j = to_json(sample_summary());
  j["blocks"][1]["weights"] = "half";
  EXPECT_NE(validate(j, schema), "");

  j = to_json(sample_summary());
  j.erase("alpha");
  EXPECT_NE(validate(j, schema), "");

  j = to_json(sample_summary());
  j["extra"] = 1;
  EXPECT_NE(validate(j, schema), "");
}

TEST(SummaryJson, AbsentSdAndNanMeanReadBack) {
  auto s = sample_summary();
  s.blocks[0].estimands[0].sd.reset();
  s.blocks[0].estimands[0].mean = NAN;
  const Json j = Json::parse(to_json(s).dump());
  EXPECT_TRUE(j["blocks"][0]["estimands"][0]["sd"].is_null());
  const auto back = summary_from_json(j);
  EXPECT_FALSE(back.blocks[0].estimands[0].sd.has_value());
  EXPECT_TRUE(std::isnan(back.blocks[0].estimands[0].mean));
}

TEST(SummaryJson, RejectsWrongFormat) {
  Json j = to_json(sample_summary());
  j["format"] = "something-else";
  EXPECT_THROW(summary_from_json(j), ValidationError);
}

TEST(NuisanceJson, RoundTripReproducesWeights) {
  const Dataset data = small_dataset("ii-a", 4000);
  const TrialTimeline tl;
  const NuisanceFit fit = fit_nuisance(data, tl);
  const NuisanceFit back = nuisance_from_json(Json::parse(to_json(fit).dump()));

  EXPECT_EQ(back.x_ref, fit.x_ref);
  EXPECT_EQ(back.cox_r1.fit.beta, fit.cox_r1.fit.beta);
  EXPECT_EQ(back.cox_entry.fit.baseline_cumhaz.values, fit.cox_entry.fit.baseline_cumhaz.values);
  EXPECT_EQ(back.logit_psi.fit.coef, fit.logit_psi.fit.coef);
  EXPECT_TRUE(std::isinf(back.cox_entry.fit.window_lo) == std::isinf(fit.cox_entry.fit.window_lo));

  int checked = 0;
  for (const auto& rec : data.records) {
    EXPECT_EQ(stabilized_weight_blinded(back, rec, 25.0), stabilized_weight_blinded(fit, rec, 25.0));
    if (rec.gamma >= 1 && (rec.arm == 1 || rec.psi == 1)) {
      EXPECT_EQ(stabilized_weight_unblinded(back, rec), stabilized_weight_unblinded(fit, rec));
      ++checked;
    }
  }
  EXPECT_GT(checked, 100);
}

TEST(NuisanceJson, RejectsWrongVersion) {
  const Dataset data = small_dataset("i-a", 2000);
  Json j = to_json(fit_nuisance(data, TrialTimeline{}));
  j["version"] = 99;
  EXPECT_THROW(nuisance_from_json(j), ValidationError);
  j.erase("version");
  EXPECT_THROW(nuisance_from_json(j), Json::exception);
}

TEST(ResultJson, CarriesEstimatesAndDiagnostics) {
  const Dataset data = small_dataset("i-a", 3000);
  AnalysisOptions opt;
  opt.weights = WeightMode::Estimated;
  const auto out = estimate_dataset(data, TrialTimeline{}, opt);
  const Json j = Json::parse(to_json(out, WeightMode::Estimated).dump());

  EXPECT_EQ(j["format"], "ve-wane-result");
  EXPECT_EQ(j["weights"], "estimated");
  EXPECT_EQ(j["theta"]["theta0"].get<double>(), out.result.theta_hat.theta0);
  EXPECT_EQ(j["theta"]["theta1"][0].get<double>(), out.result.theta_hat.theta1(0));
  ASSERT_EQ(j["ve"].size(), 2u);
  EXPECT_EQ(j["ve"][0]["tau"].get<double>(), 26.0);
  EXPECT_EQ(j["ve"][1]["point"].get<double>(), out.result.ve_estimates[1].point);
  EXPECT_EQ(j["covariance"].size(), 2u);
  EXPECT_EQ(j["waning_test"]["coordinate"].get<int>(), 1);
  EXPECT_TRUE(j["converged"].get<bool>());
  EXPECT_GT(j["weight_diagnostics"]["ess_blinded"].get<double>(), 0.0);
  EXPECT_LE(j["weight_diagnostics"]["largest"].size(), 10u);
  EXPECT_TRUE(j.contains("nuisance"));
  EXPECT_NO_THROW(nuisance_from_json(j["nuisance"]));
}

TEST(ScenarioJson, OverridesApplyOnTopOfPreset) {
  const Json j = Json::parse(R"({"preset": "ii-b", "n": 500, "timeline": {"lag": 5}, "theta1": 0.5,
                                 "frailty_var": 0})");
  const auto c = scenario_from_json(j, scenario_preset("ii-b"));
  EXPECT_EQ(c.n, 500u);
  EXPECT_EQ(c.timeline.lag, 5.0);
  EXPECT_EQ(c.timeline.t_pdcv_end, 31.0);
  EXPECT_EQ(c.theta1(0), 0.5);
  EXPECT_EQ(c.frailty_var, 0.0);
  EXPECT_EQ(c.beta_request[3], 0.8);  // preset value survives
}

TEST(ScenarioJson, RoundTrips) {
  const auto c = scenario_preset("ii-a-strong");
  const auto back = scenario_from_json(Json::parse(to_json(c).dump()));
  EXPECT_EQ(to_json(back), to_json(c));
}

TEST(ScenarioJson, RejectsUnknownAndInvalid) {
  EXPECT_THROW(scenario_from_json(Json::parse(R"({"replications": 3})")), InvalidArgument);
  EXPECT_THROW(scenario_from_json(Json::parse(R"({"timeline": {"t_end": 3}})")), InvalidArgument);
  EXPECT_THROW(scenario_from_json(Json::parse(R"({"p_x1": 1.5})")), InvalidArgument);
  EXPECT_THROW(scenario_from_json(Json::parse(R"({"waning": {"kind": "spline"}})")), InvalidArgument);
  EXPECT_THROW(scenario_from_json(Json::parse(R"({"theta1": [1, 2]})")), InvalidArgument);
}

TEST(WaningJson, LinearAndPiecewise) {
  EXPECT_FALSE(waning_from_json(to_json(WaningModelSpec::linear())).is_piecewise());
  const auto p = waning_from_json(to_json(WaningModelSpec::piecewise({10.0, 20.0})));
  EXPECT_EQ(p.knots(), (std::vector<double>{10.0, 20.0}));
}
