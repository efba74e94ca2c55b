#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "test_util.hpp"
#include "vewane/nuisance.hpp"
#include "vewane/simulation.hpp"

using namespace vewane;

namespace {

// Five subjects, no covariates, unblinding only in the vaccine arm so the
// agreement model is not fitted.
Dataset five_subjects(const TrialTimeline& tl) {
  Dataset d;
  d.n_covariates = 0;
  d.records.push_back(testutil::make_record(1.0, 1, 60.0, 19.5, 1, 0, tl.t_analysis));
  d.records.push_back(testutil::make_record(2.0, 1, 60.0, 20.0, 1, 0, tl.t_analysis));
  d.records.push_back(testutil::make_record(3.0, 1, 60.0, 22.0, 2, 0, tl.t_analysis));
  d.records.push_back(testutil::make_record(4.0, 1, 60.0, 25.0, 2, 0, tl.t_analysis));
  d.records.push_back(testutil::make_record(5.0, 0, 10.0, 10.0, 0, 0, tl.t_analysis));
  return d;
}

NuisanceOptions covariate_free() {
  NuisanceOptions o;
  o.r1_design = {false, false};
  return o;
}

double jump_at(const StepFunction& f, double t) { return f(t) - f.left_limit(t); }

// f(t | x) = dLambda0(t) exp(eta) exp(-Lambda0(t) exp(eta)), written out in full.
double density(const HazardModel& m, double t, const std::vector<double>& x, int arm) {
  const double rr = m.relative_risk(x, arm);
  return jump_at(m.fit.baseline_cumhaz, t) * rr * std::exp(-m.baseline(t) * rr);
}

}  // namespace

TEST(SurvivalKR, PiecewiseExamples) {
  TrialTimeline tl;
  NuisanceFit fit = fit_nuisance(five_subjects(tl), tl, covariate_free());
  EXPECT_EQ(survival_KR(fit, tl.t_pfizer - 0.1, {}, 1), 1.0);
  EXPECT_EQ(survival_KR(fit, tl.t_pdcv_end, {}, 1), 0.0);
  // Requested unblinding at 19.5 (4 at risk) and 20 (3 at risk); PDCV at 22
  // (2 at risk) and 25 (1 at risk).
  const double l1 = 1.0 / 4 + 1.0 / 3;
  EXPECT_NEAR(survival_KR(fit, 19.7, {}, 1), std::exp(-1.0 / 4), 1e-14);
  EXPECT_NEAR(survival_KR(fit, 20.5, {}, 1), std::exp(-l1), 1e-14);
  EXPECT_NEAR(survival_KR(fit, 23.0, {}, 1), std::exp(-(l1 + 0.5)), 1e-14);
  EXPECT_NEAR(survival_KR(fit, 26.0, {}, 0), std::exp(-(l1 + 1.5)), 1e-14);
}

TEST(SurvivalKR, NonincreasingAndRightContinuousAtPdcvStart) {
  TrialTimeline tl;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Dataset d = testutil::random_toy(seed, 300, tl, 1);
    NuisanceFit fit = fit_nuisance(d, tl);
    for (double x : {0.0, 1.0}) {
      for (int arm : {0, 1}) {
        double prev = 1.0;
        for (double t = 0.0; t <= tl.t_pdcv_end + 1.0; t += 0.01) {
          const double k = survival_KR(fit, t, {x}, arm);
          EXPECT_LE(k, prev + 1e-15);
          prev = k;
        }
        const double at = survival_KR(fit, tl.t_pdcv_start, {x}, arm);
        EXPECT_NEAR(survival_KR(fit, tl.t_pdcv_start + 1e-12, {x}, arm), at, 1e-12);
      }
    }
  }
}

TEST(StabilizedWeights, ZeroCoefficientsGiveOne) {
  TrialTimeline tl;
  Dataset d = testutil::random_toy(3, 300, tl, 1);
  NuisanceFit fit = fit_nuisance(d, tl);
  fit.zero_coefficients();
  for (const auto& r : d.records) {
    EXPECT_DOUBLE_EQ(stabilized_weight_blinded(fit, r, 25.0), 1.0);
    if (r.gamma >= 1 && (r.arm == 1 || r.psi == 1)) EXPECT_DOUBLE_EQ(stabilized_weight_unblinded(fit, r), 1.0);
  }
}

TEST(StabilizedWeights, ReferenceCovariatesGiveOne) {
  TrialTimeline tl;
  Dataset d = testutil::random_toy(4, 300, tl, 1);
  NuisanceOptions opt;
  opt.x_ref = {1.0};
  NuisanceFit fit = fit_nuisance(d, tl, opt);
  int checked = 0;
  for (const auto& r : d.records) {
    if (r.covariates[0] != 1.0) continue;
    EXPECT_NEAR(stabilized_weight_blinded(fit, r, 24.0), 1.0, 1e-15);
    if (r.gamma >= 1 && r.arm == 1) {
      EXPECT_NEAR(stabilized_weight_unblinded(fit, r), 1.0, 1e-15);
      ++checked;
    }
  }
  EXPECT_GT(checked, 0);
}

TEST(StabilizedWeights, MatchExplicitDensityRatios) {
  TrialTimeline tl;
  Dataset d = testutil::random_toy(8, 400, tl, 1);
  NuisanceFit fit = fit_nuisance(d, tl);
  ASSERT_GT(std::abs(fit.cox_r1.fit.beta(0)), 0.0);
  const auto& xr = fit.x_ref;
  for (const auto& r : d.records) {
    for (double t : {5.0, 20.0, 21.0, 28.0}) {
      const double num = density(fit.cox_entry, r.entry, xr, r.arm) * survival_KR(fit, t, xr, r.arm);
      const double den = density(fit.cox_entry, r.entry, r.covariates, r.arm) * survival_KR(fit, t, r.covariates, r.arm);
      EXPECT_NEAR(stabilized_weight_blinded(fit, r, t), num / den, 1e-11 * num / den);
    }
    if (r.gamma < 1 || (r.arm == 0 && r.psi != 1)) continue;
    const HazardModel& cause = r.gamma == 1 ? fit.cox_r1 : fit.cox_r2;
    auto f_r = [&](const std::vector<double>& x) {
      return jump_at(cause.fit.baseline_cumhaz, r.r_time) * cause.relative_risk(x, r.arm) *
             survival_KR(fit, r.r_time, x, r.arm);
    };
    double num = density(fit.cox_entry, r.entry, xr, r.arm) * f_r(xr);
    double den = density(fit.cox_entry, r.entry, r.covariates, r.arm) * f_r(r.covariates);
    if (r.arm == 0) {
      num *= fit.logit_psi.probability(xr, r.gamma);
      den *= fit.logit_psi.probability(r.covariates, r.gamma);
    }
    EXPECT_NEAR(stabilized_weight_unblinded(fit, r), num / den, 1e-11 * num / den);
  }
}

TEST(StabilizedWeights, PositivityAndPreconditionErrors) {
  TrialTimeline tl;
  Dataset d = testutil::random_toy(9, 200, tl, 1);
  NuisanceFit fit = fit_nuisance(d, tl);
  EXPECT_THROW(stabilized_weight_blinded(fit, d.records[0], tl.t_pdcv_end), PositivityError);
  ParticipantRecord r = d.records[0];
  r.gamma = 0;
  EXPECT_THROW(stabilized_weight_unblinded(fit, r), InvalidArgument);
  r = testutil::make_record(1.0, 0, 60.0, 20.0, 1, 0, tl.t_analysis, {1.0});
  EXPECT_THROW(stabilized_weight_unblinded(fit, r), InvalidArgument);
}

namespace {

// |w - 1| at the times a participant contributes: entry, the unblinding
// landmarks, and the end of blinded follow-up.
std::vector<double> null_weight_deviations(std::size_t n, std::uint64_t seed) {
  ScenarioConfig cfg = scenario_preset("i-a");
  const TrialTimeline& tl = cfg.timeline;
  Dataset d = generate_dataset(cfg, n, seed);
  NuisanceFit fit = fit_nuisance(d, tl);
  std::vector<double> dev;
  for (const auto& r : d.records) {
    const double end = std::min(r.infect_time, tl.t_pdcv_end - 1e-9);
    for (double t : {r.entry, std::min(end, tl.t_pfizer), std::min(end, tl.t_pdcv_start), end}) {
      dev.push_back(std::abs(stabilized_weight_blinded(fit, r, t) - 1.0));
    }
    if (r.gamma >= 1 && (r.arm == 1 || r.psi == 1)) dev.push_back(std::abs(stabilized_weight_unblinded(fit, r) - 1.0));
  }
  std::sort(dev.begin(), dev.end());
  return dev;
}

double quantile(const std::vector<double>& sorted, double q) {
  return sorted[static_cast<std::size_t>(q * static_cast<double>(sorted.size() - 1))];
}

}  // namespace

// Without covariate effects the weights are one up to sampling noise. The
// extreme tail is driven by the entry and PDCV baselines, which approach
// log n at the edge of their support, so the bound is checked on the bulk
// and the tail is required to shrink with n.
TEST(StabilizedWeights, CancelWithoutCovariateEffects) {
  auto big = null_weight_deviations(30000, 2024);
  auto small = null_weight_deviations(3000, 2024);
  EXPECT_LT(quantile(big, 0.5), 0.03);
  EXPECT_LT(quantile(big, 0.9), 0.15);
  EXPECT_LT(quantile(big, 0.99), quantile(small, 0.99));
  EXPECT_LT(quantile(big, 0.5), quantile(small, 0.5));
}
