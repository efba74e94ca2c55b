#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "vewane/nuisance.hpp"
#include "vewane/processes.hpp"
#include "vewane/record.hpp"
#include "vewane/rng.hpp"
#include "vewane/solver.hpp"
#include "vewane/timeline.hpp"
#include "vewane/waning.hpp"

namespace vewane {

struct AnalysisOptions {
  WaningModelSpec spec = WaningModelSpec::piecewise({20.0});
  WeightMode weights = WeightMode::Unit;
  NuisanceOptions nuisance;
  bool zero_nuisance_coefficients = false;  // keep baselines, drop covariate effects
  SolverOptions solver;
  std::vector<double> taus;  // empty: one per waning segment
  double alpha = 0.05;
  int bootstrap_reps = 0;  // > 0 replaces the sandwich by a nonparametric bootstrap covariance
  std::uint64_t bootstrap_seed = 1;
  bool validate = true;
};

struct WeightRecord {
  std::size_t index = 0;
  std::string process;
  double weight = 0.0;
};

struct WeightDiagnostics {
  std::vector<WeightRecord> largest;  // up to 10, descending
  double ess_blinded = 0.0;
  double ess_unblinded = 0.0;
  std::size_t n_blinded = 0;
  std::size_t n_unblinded = 0;
  double min_weight = 0.0;
  double max_weight = 0.0;
};

struct AnalysisOutput {
  EstimationResult result;
  std::optional<NuisanceFit> nuisance;
  WeightDiagnostics diagnostics;
  Matrix sandwich_cov;
  int bootstrap_failures = 0;
};

/// Kish effective sample size (sum w)^2 / sum w^2.
inline double effective_sample_size(const std::vector<double>& w) {
  double s = 0.0, s2 = 0.0;
  for (double x : w) {
    s += x;
    s2 += x * x;
  }
  return s2 > 0.0 ? s * s / s2 : 0.0;
}

/// Blinded weights are taken at the end of each participant's blinded
/// follow-up, unblinded weights for every participant entering that process.
inline WeightDiagnostics weight_diagnostics(const WeightedProcesses& proc, std::size_t top = 10) {
  WeightDiagnostics d;
  const auto& tl = proc.timeline();
  std::vector<WeightRecord> all;
  std::vector<double> wb, wu;
  for (std::size_t i = 0; i < proc.size(); ++i) {
    const auto& s = proc.subjects()[i];
    double t = std::min(s.u, s.r);
    if (t >= tl.t_pdcv_end) t = std::nextafter(tl.t_pdcv_end, -INFINITY);
    const double b = proc.blinded_weight(s, t);
    wb.push_back(b);
    all.push_back({i, "blinded", b});
    if (s.gamma >= 1 && (s.arm == 1 || s.crossed)) {
      wu.push_back(s.sw_unblinded);
      all.push_back({i, "unblinded", s.sw_unblinded});
    }
  }
  d.n_blinded = wb.size();
  d.n_unblinded = wu.size();
  d.ess_blinded = effective_sample_size(wb);
  d.ess_unblinded = effective_sample_size(wu);
  if (!all.empty()) {
    auto [mn, mx] = std::minmax_element(all.begin(), all.end(),
                                        [](const auto& a, const auto& b) { return a.weight < b.weight; });
    d.min_weight = mn->weight;
    d.max_weight = mx->weight;
  }
  const std::size_t k = std::min(top, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(),
                    [](const auto& a, const auto& b) {
                      return a.weight != b.weight ? a.weight > b.weight : a.index < b.index;
                    });
  d.largest.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k));
  return d;
}

namespace detail {

inline WeightedProcesses analysis_processes(const Dataset& data, const TrialTimeline& tl, const AnalysisOptions& opt,
                                            std::optional<NuisanceFit>& fit_out) {
  if (opt.weights == WeightMode::Unit) return build_processes(data, tl, opt.spec);
  NuisanceFit fit = fit_nuisance(data, tl, opt.nuisance);
  if (opt.zero_nuisance_coefficients) fit.zero_coefficients();
  fit_out = fit;
  return build_processes(data, tl, opt.spec, *fit_out);
}

}  // namespace detail

/// Full analysis of one dataset: optional nuisance fits and weights, theta,
/// covariance, VE table, waning test and weight diagnostics.
inline AnalysisOutput estimate_dataset(const Dataset& data, const TrialTimeline& tl, const AnalysisOptions& opt = {}) {
  if (opt.validate) validate_dataset(data, tl);
  opt.spec.check_knots_within(tl.t_analysis);
  AnalysisOutput out;
  WeightedProcesses proc = detail::analysis_processes(data, tl, opt, out.nuisance);
  out.result = solve_theta(proc, Theta::zeros(opt.spec), opt.solver, opt.taus, opt.alpha);
  out.sandwich_cov = out.result.cov;
  out.diagnostics = weight_diagnostics(proc);

  if (opt.bootstrap_reps > 0) {
    std::vector<Vector> draws;
    for (int b = 0; b < opt.bootstrap_reps; ++b) {
      SplitMix64 rng = substream(opt.bootstrap_seed, 0xB007, static_cast<std::uint64_t>(b));
      std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
      Dataset boot;
      boot.n_covariates = data.n_covariates;
      boot.records.reserve(data.size());
      for (std::size_t i = 0; i < data.size(); ++i) boot.records.push_back(data.records[pick(rng)]);
      try {
        std::optional<NuisanceFit> unused;
        WeightedProcesses bp = detail::analysis_processes(boot, tl, opt, unused);
        SolverOptions so = opt.solver;
        auto r = solve_theta(bp, Theta::zeros(opt.spec), so, opt.taus, opt.alpha);
        draws.push_back(r.theta_hat.as_vector());
      } catch (const Error&) {
        ++out.bootstrap_failures;
      }
    }
    if (draws.size() < 2) throw ConvergenceError("bootstrap produced fewer than two successful replicates");
    const int d = opt.spec.dim_theta();
    Vector mean = Vector::Zero(d);
    for (const auto& v : draws) mean += v;
    mean /= static_cast<double>(draws.size());
    Matrix cov = Matrix::Zero(d, d);
    for (const auto& v : draws) cov += (v - mean) * (v - mean).transpose();
    out.result.cov = cov / static_cast<double>(draws.size() - 1);
    report_ve(out.result, out.result.ve_estimates.empty() ? default_ve_taus(opt.spec, tl.lag) : [&] {
      std::vector<double> t;
      for (const auto& v : out.result.ve_estimates) t.push_back(v.tau);
      return t;
    }(), opt.alpha);
  }
  return out;
}

}  // namespace vewane
