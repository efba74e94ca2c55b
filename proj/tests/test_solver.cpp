#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "grid_oracle.hpp"
#include "test_util.hpp"
#include "vewane/estimating.hpp"
#include "vewane/simulation.hpp"
#include "vewane/solver.hpp"

using namespace vewane;

namespace {

const TrialTimeline kTl;
const WaningModelSpec kSpec = WaningModelSpec::piecewise({20.0});

oracle::Model unit_model(const Dataset& d, const WaningModelSpec& spec) {
  return {d, kTl, spec, std::vector<double>(d.size(), 1.0), std::vector<double>(d.size(), 1.0)};
}

ParticipantRecord rec(double e, int arm, double u) {
  return testutil::make_record(e, arm, u, u, 0, 0, kTl.t_analysis);
}

}  // namespace

TEST(SolveTheta, MatchesGridBisectionOracleOnSmallToys) {
  int matched = 0;
  for (std::uint64_t seed = 1; seed < 400 && matched < 3; ++seed) {
    Dataset d = testutil::random_toy(seed, 8, kTl, 1);
    EstimationResult res;
    try {
      res = solve_theta(build_processes(d, kTl, kSpec), Theta::zeros(kSpec));
    } catch (const Error&) {
      continue;
    }
    auto root = oracle::GridSolver(unit_model(d, kSpec)).solve();
    if (!root) continue;
    EXPECT_NEAR(res.theta_hat.theta0, root->first, 1e-3) << "seed " << seed;
    EXPECT_NEAR(res.theta_hat.theta1(0), root->second, 1e-3) << "seed " << seed;
    ++matched;
  }
  EXPECT_EQ(matched, 3);
}

TEST(SolveTheta, EstimatingFunctionVanishesAtSolution) {
  int solved = 0;
  for (const auto& spec : {kSpec, WaningModelSpec::linear(), WaningModelSpec::piecewise({10.0, 25.0})}) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      Dataset d = testutil::random_toy(seed, 150, kTl, 1);
      auto proc = build_processes(d, kTl, spec);
      EstimationResult res;
      try {
        res = solve_theta(proc, Theta::zeros(spec));
      } catch (const IdentifiabilityError&) {
        continue;
      }
      EXPECT_TRUE(res.converged);
      EXPECT_LT(estimating_function(proc, res.theta_hat).cwiseAbs().maxCoeff(), 1e-8);
      // Covariance symmetric positive semidefinite, intervals ordered.
      EXPECT_LT((res.cov - res.cov.transpose()).norm(), 1e-12 * res.cov.norm());
      Eigen::SelfAdjointEigenSolver<Matrix> es(res.cov);
      EXPECT_GE(es.eigenvalues().minCoeff(), -1e-12 * es.eigenvalues().maxCoeff());
      for (const auto& v : res.ve_estimates) {
        EXPECT_LE(v.lower, v.point);
        EXPECT_LE(v.point, v.upper);
      }
      EXPECT_EQ(res.trace.size(), static_cast<std::size_t>(res.iterations) + 1);
      ++solved;
    }
  }
  EXPECT_GE(solved, 20);
}

TEST(SolveTheta, Theta0UnidentifiedWithoutVaccineInfections) {
  Dataset d;
  for (int i = 0; i < 6; ++i) d.records.push_back(rec(1.0 + i, 0, 15.0 + i));
  for (int i = 0; i < 6; ++i) d.records.push_back(rec(1.0 + i, 1, 70.0));
  try {
    solve_theta(build_processes(d, kTl, kSpec), Theta::zeros(kSpec));
    FAIL();
  } catch (const IdentifiabilityError& e) {
    EXPECT_NE(std::string(e.what()).find("theta0"), std::string::npos);
  }
}

TEST(SolveTheta, Theta1UnidentifiedWithoutLateInfections) {
  Dataset d;
  for (int i = 0; i < 6; ++i) d.records.push_back(rec(1.0 + i, 0, 15.0 + i));
  for (int i = 0; i < 6; ++i) d.records.push_back(rec(1.0 + i, 1, i < 2 ? 16.0 + i : 70.0));
  try {
    solve_theta(build_processes(d, kTl, kSpec), Theta::zeros(kSpec));
    FAIL();
  } catch (const IdentifiabilityError& e) {
    EXPECT_NE(std::string(e.what()).find("theta1"), std::string::npos);
  }
}

TEST(SolveTheta, NonConvergenceReportsTrace) {
  Dataset d = testutil::random_toy(3, 150, kTl, 1);
  SolverOptions opt;
  opt.max_iter = 1;
  try {
    solve_theta(build_processes(d, kTl, kSpec), Theta::zeros(kSpec), opt);
    FAIL();
  } catch (const ConvergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("iter 1"), std::string::npos);
  }
}

// Everyone enters at 0 and stays blinded; infections happen at two tied
// times, one on each side of the knot. The equation then decouples into two
// two-group log rate ratios.
TEST(SolveTheta, AllBlindedMatchesClosedFormRateRatios) {
  struct Counts {
    int n0, n1, d0a, d1a, d0b, d1b;
  };
  for (const Counts c : {Counts{100, 100, 10, 1, 8, 3}, Counts{50, 80, 7, 2, 4, 6}, Counts{200, 150, 20, 5, 9, 9}}) {
    Dataset d;
    const double ta = 10.0, tb = 28.0;  // waning time 4 and 22
    auto add = [&](int arm, int count, double u) {
      for (int i = 0; i < count; ++i) d.records.push_back(rec(0.0, arm, u));
    };
    add(0, c.d0a, ta);
    add(0, c.d0b, tb);
    add(0, c.n0 - c.d0a - c.d0b, 70.0);
    add(1, c.d1a, ta);
    add(1, c.d1b, tb);
    add(1, c.n1 - c.d1a - c.d1b, 70.0);
    auto res = solve_theta(build_processes(d, kTl, kSpec), Theta::zeros(kSpec));
    const double early = std::log((double(c.d1a) / c.n1) / (double(c.d0a) / c.n0));
    const double late =
        std::log((double(c.d1b) / (c.n1 - c.d1a)) / (double(c.d0b) / (c.n0 - c.d0a)));
    EXPECT_NEAR(res.theta_hat.theta0, early, 1e-9);
    EXPECT_NEAR(res.theta_hat.theta0 + res.theta_hat.theta1(0), late, 1e-9);
    EXPECT_EQ(res.n_jumps_u, 0u);
    EXPECT_TRUE(res.cumhaz_u.empty());
  }
}

TEST(ReportVe, ReferenceValues) {
  EstimationResult r;
  r.spec = kSpec;
  r.lag = 6.0;
  r.theta_hat = {std::log(0.05), Vector::Zero(1)};
  r.cov = Matrix::Identity(2, 2) * 0.01;
  report_ve(r, {6.0 + 20.0, 6.0 + 21.0});
  EXPECT_NEAR(r.ve_estimates[0].point, 0.95, 1e-12);
  EXPECT_NEAR(r.ve_estimates[1].point, 0.95, 1e-12);
  r.theta_hat.theta1(0) = std::log(7.0);
  report_ve(r, {6.0 + 20.0, 6.0 + 21.0});
  EXPECT_NEAR(r.ve_estimates[0].point, 0.95, 1e-12);
  EXPECT_NEAR(r.ve_estimates[1].point, 0.65, 1e-12);
  EXPECT_GT(r.wald_waning.statistic, 0.0);
  EXPECT_NEAR(r.wald_waning.statistic, std::log(7.0) / 0.1, 1e-12);
  EXPECT_TRUE(r.wald_waning.reject);
  EXPECT_NEAR(r.wald_waning.p_value, normal_upper_tail(std::log(7.0) / 0.1), 1e-15);
}

TEST(ReportVe, DefaultTausStraddleTheKnot) {
  auto taus = default_ve_taus(kSpec, 6.0);
  ASSERT_EQ(taus.size(), 2u);
  EXPECT_EQ(taus[0], 26.0);
  EXPECT_EQ(taus[1], 27.0);
}

// Delta-method SE against the SD of 1 - exp(c' theta) under theta ~ N(theta_hat, cov).
TEST(ReportVe, DeltaMethodMatchesParametricBootstrap) {
  const Theta th{std::log(0.05), Vector::Constant(1, std::log(7.0))};
  Matrix cov(2, 2);
  cov << 0.0064, -0.004, -0.004, 0.012;  // log-scale SD 0.08 early, 0.063 late
  Eigen::LLT<Matrix> llt(cov);
  const Matrix chol = llt.matrixL();
  for (double tau : {26.0, 27.0}) {
    const VeEstimate v = ve_estimate(th, cov, kSpec, tau, 6.0);
    auto rng = substream(77, 0, 0);
    std::normal_distribution<double> normal(0.0, 1.0);
    const int draws = 100000;
    double sum = 0.0, sum2 = 0.0;
    for (int b = 0; b < draws; ++b) {
      Vector e(2);
      e << normal(rng), normal(rng);
      const Vector t = th.as_vector() + chol * e;
      const double ve = ve_from_theta(Theta::from_vector(t), kSpec, tau, 6.0);
      sum += ve;
      sum2 += ve * ve;
    }
    const double mean = sum / draws;
    const double sd = std::sqrt((sum2 - draws * mean * mean) / (draws - 1));
    EXPECT_NEAR(v.se / sd, 1.0, 0.02) << "tau " << tau;
  }
}

TEST(SolveTheta, SingleSimulatedTrialRecoversTruth) {
  for (const char* name : {"i-a", "i-b"}) {
    ScenarioConfig cfg = scenario_preset(name);
    Dataset d = generate_dataset(cfg, cfg.n, 20240601);
    auto res = solve_theta(build_processes(d, cfg.timeline, cfg.waning), Theta::zeros(cfg.waning));
    const double se = std::sqrt(res.cov(1, 1));
    EXPECT_LT(std::abs(res.theta_hat.theta1(0) - cfg.theta1(0)), 3 * se) << name;
    EXPECT_GT(se, 0.15) << name;
    EXPECT_LT(se, 0.6) << name;
  }
}

TEST(SolveTheta, DivergingRootIsReported) {
  // The estimating function of this toy only vanishes as theta1 -> +inf.
  Dataset d = testutil::random_toy(5000, 10, kTl, 1);
  try {
    solve_theta(build_processes(d, kTl, kSpec), Theta::zeros(kSpec));
    FAIL() << "expected ConvergenceError";
  } catch (const ConvergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("no finite root"), std::string::npos);
  }
  EXPECT_FALSE(oracle::GridSolver(unit_model(d, kSpec)).solve().has_value());
}
