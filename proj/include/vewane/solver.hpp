#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vewane/error.hpp"
#include "vewane/estimating.hpp"
#include "vewane/processes.hpp"
#include "vewane/step_function.hpp"
#include "vewane/waning.hpp"

namespace vewane {

struct SolverOptions {
  double tol = 1e-8;  // on the max-norm of the estimating function
  int max_iter = 100;
  int max_halvings = 30;
  bool grouped = true;  // grouped risk tables for piecewise waning
  double divergence_bound = 15.0;  // |theta| beyond this is treated as infinite
};

struct IterationRecord {
  int iteration = 0;
  double ef_norm = 0.0;  // max-norm at the iterate
  Vector theta;
};

struct VeEstimate {
  double tau = 0.0;
  double point = 0.0;
  double se = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

/// One-sided Wald test of H0: theta1 <= 0 against theta1 > 0.
struct WaldTest {
  int coordinate = 0;  // index into the full theta vector
  double statistic = 0.0;
  double p_value = 1.0;
  double alpha = 0.05;
  bool reject = false;
};

struct EstimationResult {
  WaningModelSpec spec = WaningModelSpec::linear();
  double lag = 0.0;
  Theta theta_hat;
  Matrix cov;
  std::vector<VeEstimate> ve_estimates;
  WaldTest wald_waning;
  int iterations = 0;
  bool converged = false;
  std::vector<IterationRecord> trace;
  StepFunction cumhaz_b;
  StepFunction cumhaz_u;
  std::size_t n_jumps_b = 0;
  std::size_t n_jumps_u = 0;

  Vector se() const { return cov.diagonal().cwiseMax(0.0).cwiseSqrt(); }
};

inline std::string theta_coordinate_name(const WaningModelSpec& spec, int k) {
  if (k == 0) return "theta0";
  if (spec.dim_theta1() == 1) return "theta1";
  return "theta1[" + std::to_string(k - 1) + "]";
}

/// Standard normal upper tail probability.
inline double normal_upper_tail(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

/// Representative waning times u = tau - lag, one per piecewise segment;
/// for linear waning the origin and every 10 weeks up to 20.
inline std::vector<double> default_ve_taus(const WaningModelSpec& spec, double lag) {
  std::vector<double> out;
  if (!spec.is_piecewise()) {
    for (double u : {0.0, 10.0, 20.0}) out.push_back(lag + u);
    return out;
  }
  const auto& k = spec.knots();
  out.push_back(lag + k[0]);
  for (std::size_t s = 1; s < k.size(); ++s) out.push_back(lag + k[s]);
  out.push_back(lag + k.back() + 1.0);
  return out;
}

namespace detail {

// Every coordinate of theta needs an active jump whose Z loads on it.
inline void check_identifiable(const WeightedProcesses& proc) {
  const auto& spec = proc.spec();
  bool placebo_b = false, vaccine_b = false;
  std::vector<bool> support(static_cast<std::size_t>(spec.dim_theta()), false);
  for (const auto& s : proc.subjects()) {
    if (s.jump_b) {
      (s.arm == 1 ? vaccine_b : placebo_b) = true;
      Vector z = proc.z_blinded(s, s.u);
      for (int k = 1; k < z.size(); ++k) support[k] = support[k] || z(k) != 0.0;
    }
    if (s.jump_u) {
      Vector z = proc.z_unblinded(s, s.u);
      for (int k = 1; k < z.size(); ++k) support[k] = support[k] || z(k) != 0.0;
    }
  }
  if (!placebo_b || !vaccine_b) {
    throw IdentifiabilityError(
        "theta0 is not identified: blinded infections are required in both the placebo and the vaccine arm");
  }
  for (int k = 1; k < spec.dim_theta(); ++k) {
    if (!support[k]) {
      throw IdentifiabilityError(theta_coordinate_name(spec, k) +
                                 " is not identified: no infection falls in its waning window");
    }
  }
}

inline std::string describe_trace(const std::vector<IterationRecord>& trace) {
  std::ostringstream os;
  for (const auto& r : trace) {
    os << "\n  iter " << r.iteration << " |EF|=" << r.ef_norm << " theta=" << r.theta.transpose();
  }
  return os.str();
}

inline Eigen::FullPivLU<Matrix> factor_jacobian(const Matrix& jac, const WaningModelSpec& spec) {
  Eigen::FullPivLU<Matrix> lu(jac);
  lu.setThreshold(1e-12);
  if (!lu.isInvertible()) {
    const double scale = jac.cwiseAbs().maxCoeff();
    for (int k = 0; k < jac.rows(); ++k) {
      if (std::abs(jac(k, k)) <= 1e-12 * std::max(scale, 1.0)) {
        throw IdentifiabilityError("singular Jacobian: " + theta_coordinate_name(spec, k) + " is not identified");
      }
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (jac + jac.transpose()));
    Eigen::Index worst = 0;
    es.eigenvectors().col(0).cwiseAbs().maxCoeff(&worst);
    throw IdentifiabilityError("singular Jacobian: " + theta_coordinate_name(spec, static_cast<int>(worst)) +
                               " is not identified");
  }
  return lu;
}

}  // namespace detail

/// Sandwich covariance J^{-1} (sum psi_i psi_i^T) J^{-T}, with the weights
/// treated as known.
inline Matrix sandwich_cov(const EstimatingEquation& eq, const Theta& theta_hat) {
  const Matrix jac = eq.jacobian(theta_hat);
  const auto lu = detail::factor_jacobian(jac, eq.processes().spec());
  Matrix meat = Matrix::Zero(eq.dim(), eq.dim());
  for (const Vector& p : eq.influence(theta_hat)) meat.noalias() += p * p.transpose();
  const Matrix jinv = lu.inverse();
  Matrix cov = jinv * meat * jinv.transpose();
  return 0.5 * (cov + cov.transpose());
}

inline Matrix sandwich_cov(const WeightedProcesses& proc, const Theta& theta_hat) {
  return sandwich_cov(EstimatingEquation(proc), theta_hat);
}

/// VE(tau) with delta-method SE; the 95% interval is a Wald interval for the
/// log rate ratio mapped through 1 - exp(.).
inline VeEstimate ve_estimate(const Theta& theta, const Matrix& cov, const WaningModelSpec& spec, double tau,
                              double lag, double z_crit = 1.959963984540054) {
  if (tau < lag) throw InvalidArgument("VE is only modelled after full efficacy (tau >= lag)");
  Vector c(spec.dim_theta());
  c(0) = 1.0;
  c.tail(spec.dim_theta1()) = g_basis(spec, tau - lag);
  const double eta = c.dot(theta.as_vector());
  const double se_eta = std::sqrt(std::max(0.0, c.dot(cov * c)));
  VeEstimate v;
  v.tau = tau;
  v.point = 1.0 - std::exp(eta);
  v.se = std::exp(eta) * se_eta;
  v.lower = 1.0 - std::exp(eta + z_crit * se_eta);
  v.upper = 1.0 - std::exp(eta - z_crit * se_eta);
  return v;
}

/// Tests the last coordinate of theta1 (the only one for single-knot or
/// linear waning).
inline WaldTest waning_wald_test(const Theta& theta, const Matrix& cov, double alpha = 0.05) {
  WaldTest w;
  w.alpha = alpha;
  w.coordinate = static_cast<int>(theta.theta1.size());
  const double est = theta.theta1(theta.theta1.size() - 1);
  const double se = std::sqrt(std::max(0.0, cov(w.coordinate, w.coordinate)));
  w.statistic = se > 0.0 ? est / se : (est > 0.0 ? INFINITY : (est < 0.0 ? -INFINITY : 0.0));
  w.p_value = normal_upper_tail(w.statistic);
  w.reject = w.p_value < alpha;
  return w;
}

/// Fills the VE table and the waning test of `result` for the given taus.
inline void report_ve(EstimationResult& result, const std::vector<double>& taus, double alpha = 0.05) {
  result.ve_estimates.clear();
  for (double tau : taus) {
    result.ve_estimates.push_back(ve_estimate(result.theta_hat, result.cov, result.spec, tau, result.lag));
  }
  result.wald_waning = waning_wald_test(result.theta_hat, result.cov, alpha);
}

/// Newton-Raphson for the profiled estimating equation, then sandwich
/// covariance, VE table (default taus when empty) and waning test.
inline EstimationResult solve_theta(const WeightedProcesses& proc, const Theta& init, const SolverOptions& opt = {},
                                    const std::vector<double>& taus = {}, double alpha = 0.05) {
  const auto& spec = proc.spec();
  detail::check_identifiable(proc);
  EstimatingEquation eq(proc, opt.grouped);

  EstimationResult res;
  res.spec = spec;
  res.lag = proc.timeline().lag;
  res.n_jumps_b = eq.n_jumps(ProcessKind::Blinded);
  res.n_jumps_u = eq.n_jumps(ProcessKind::Unblinded);

  Vector th = init.as_vector();
  if (th.size() != spec.dim_theta()) throw InvalidArgument("initial theta has the wrong dimension");
  auto ev = eq.evaluate(Theta::from_vector(th));
  for (int it = 0;; ++it) {
    const double norm = ev.value.cwiseAbs().maxCoeff();
    res.trace.push_back({it, norm, th});
    if (norm < opt.tol) {
      res.converged = true;
      res.iterations = it;
      break;
    }
    if (it >= opt.max_iter) {
      throw ConvergenceError("theta did not converge in " + std::to_string(opt.max_iter) + " iterations" +
                             detail::describe_trace(res.trace));
    }
    const Vector step = detail::factor_jacobian(ev.jacobian, spec).solve(ev.value);
    const double norm2 = ev.value.norm();
    double scale = 1.0;
    Vector cand;
    EstimatingEquation::Evaluation cand_ev;
    bool accepted = false;
    for (int h = 0; h <= opt.max_halvings; ++h, scale *= 0.5) {
      cand = th - scale * step;
      try {
        cand_ev = eq.evaluate(Theta::from_vector(cand));
      } catch (const DegenerateRiskSetError&) {
        continue;
      }
      if (cand_ev.value.allFinite() && cand_ev.value.norm() < norm2) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      throw ConvergenceError("step-halving failed to reduce the estimating function" +
                             detail::describe_trace(res.trace));
    }
    th = cand;
    ev = std::move(cand_ev);
  }
  // Without a finite root the estimating function still decays to zero as a
  // coordinate runs off to infinity; the Newton step there stays large.
  if (res.iterations > 0) {
    const std::string msg = "estimating equation has no finite root: theta diverges" + detail::describe_trace(res.trace);
    Vector step;
    try {
      step = detail::factor_jacobian(ev.jacobian, spec).solve(ev.value);
    } catch (const Error&) {
      throw ConvergenceError(msg);
    }
    if (!step.allFinite() || step.cwiseAbs().maxCoeff() > 1e-3 || th.cwiseAbs().maxCoeff() > opt.divergence_bound) {
      throw ConvergenceError(msg);
    }
  }

  res.theta_hat = Theta::from_vector(th);
  res.cov = sandwich_cov(eq, res.theta_hat);
  res.cumhaz_b = eq.cumulative_hazard(ProcessKind::Blinded, res.theta_hat);
  res.cumhaz_u = eq.cumulative_hazard(ProcessKind::Unblinded, res.theta_hat);
  report_ve(res, taus.empty() ? default_ve_taus(spec, res.lag) : taus, alpha);
  return res;
}

inline EstimationResult solve_theta(const WeightedProcesses& proc, const SolverOptions& opt = {}) {
  return solve_theta(proc, Theta::zeros(proc.spec()), opt);
}

}  // namespace vewane
