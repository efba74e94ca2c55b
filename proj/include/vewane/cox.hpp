#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "vewane/error.hpp"
#include "vewane/step_function.hpp"
#include "vewane/waning.hpp"

namespace vewane {

/// Newton-Raphson controls shared by the Cox and logistic fitters.
struct NewtonOptions {
  double tol = 1e-9;  // max-norm of the score
  int max_iter = 50;
  int max_halvings = 40;
  // |coef| * sd(column) beyond this is treated as a divergent (infinite) MLE.
  double divergence_bound = 15.0;
};

/// Proportional hazards fit with Breslow ties and Breslow baseline.
///
/// Covariates are centred internally; `center` records the shift so that the
/// relative risk of a raw row x is exp{beta . (x - center)} and the baseline
/// cumulative hazard refers to x = center.
struct CoxFit {
  Vector beta;
  Vector center;
  StepFunction baseline_cumhaz;
  double window_lo = -std::numeric_limits<double>::infinity();
  double window_hi = std::numeric_limits<double>::infinity();
  double loglik = 0.0;
  Vector score;
  int iterations = 0;
  int n_events = 0;

  double linear_predictor(const Vector& x) const { return beta.size() ? beta.dot(x - center) : 0.0; }
  double relative_risk(const Vector& x) const { return std::exp(linear_predictor(x)); }
  double cumhaz(double t, const Vector& x) const { return baseline_cumhaz(t) * relative_risk(x); }
};

namespace detail {

struct CoxDerivatives {
  double loglik = 0.0;
  Vector score;
  Matrix info;
};

// Subjects sorted by decreasing time; `order` indexes into the design.
inline CoxDerivatives cox_derivatives(const std::vector<double>& time, const std::vector<int>& event,
                                      const Matrix& xc, const std::vector<std::size_t>& order, const Vector& beta,
                                      double lo, double hi, bool want_info = true) {
  const Eigen::Index p = xc.cols();
  CoxDerivatives d;
  d.score = Vector::Zero(p);
  d.info = Matrix::Zero(p, p);
  double s0 = 0.0;
  Vector s1 = Vector::Zero(p);
  Matrix s2 = Matrix::Zero(p, p);
  std::size_t k = 0;
  const std::size_t n = order.size();
  while (k < n) {
    const double t = time[order[k]];
    std::size_t j = k;
    int deaths = 0;
    Vector xsum = Vector::Zero(p);
    for (; j < n && time[order[j]] == t; ++j) {
      const std::size_t i = order[j];
      const double eta = p ? xc.row(i).dot(beta) : 0.0;
      const double r = std::exp(eta);
      s0 += r;
      if (p) {
        s1.noalias() += r * xc.row(i).transpose();
        if (want_info) s2.noalias() += r * xc.row(i).transpose() * xc.row(i);
      }
      if (event[i] && t >= lo && t < hi) {
        ++deaths;
        d.loglik += eta;
        if (p) xsum += xc.row(i).transpose();
      }
    }
    if (deaths > 0) {
      d.loglik -= deaths * std::log(s0);
      if (p) {
        Vector mean = s1 / s0;
        d.score += xsum - deaths * mean;
        if (want_info) d.info += deaths * (s2 / s0 - mean * mean.transpose());
      }
    }
    k = j;
  }
  return d;
}

}  // namespace detail

/// Maximizes the Cox partial likelihood for events inside [lo, hi).
///
/// Risk sets at an event time t hold every subject with time >= t, so
/// subjects whose time falls outside the window act as censored. Throws
/// ConvergenceError("monotone likelihood ...") when a coefficient diverges.
inline CoxFit fit_cox(const std::vector<double>& time, const std::vector<int>& event, const Matrix& x,
                      double lo = -std::numeric_limits<double>::infinity(),
                      double hi = std::numeric_limits<double>::infinity(), const NewtonOptions& opt = {}) {
  const std::size_t n = time.size();
  if (event.size() != n || static_cast<std::size_t>(x.rows()) != n) {
    throw InvalidArgument("fit_cox: time, event and design have different lengths");
  }
  const Eigen::Index p = x.cols();
  int n_events = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(time[i]) && event[i]) throw InvalidArgument("fit_cox: infinite event time");
    if (event[i] && time[i] >= lo && time[i] < hi) ++n_events;
  }
  if (n_events == 0) throw InvalidArgument("fit_cox: no events in the fitting window");

  CoxFit fit;
  fit.window_lo = lo;
  fit.window_hi = hi;
  fit.n_events = n_events;
  fit.center = p ? Vector(x.colwise().mean().transpose()) : Vector();
  Matrix xc = x;
  if (p) xc.rowwise() -= fit.center.transpose();
  Vector scale = Vector::Ones(p);
  for (Eigen::Index c = 0; c < p; ++c) {
    double sd = std::sqrt(xc.col(c).squaredNorm() / static_cast<double>(n));
    if (sd > 0) scale(c) = sd;
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return time[a] > time[b]; });

  Vector beta = Vector::Zero(p);
  auto d = detail::cox_derivatives(time, event, xc, order, beta, lo, hi);
  int iter = 0;
  while (p && d.score.cwiseAbs().maxCoeff() >= opt.tol) {
    if (iter >= opt.max_iter) {
      throw ConvergenceError("Cox fit did not converge in " + std::to_string(opt.max_iter) +
                             " iterations; score max-norm " + std::to_string(d.score.cwiseAbs().maxCoeff()));
    }
    Eigen::LDLT<Matrix> ldlt(d.info);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
        ldlt.vectorD().minCoeff() <= 1e-12 * std::max(1.0, ldlt.vectorD().maxCoeff())) {
      throw IdentifiabilityError("Cox fit: singular information matrix");
    }
    Vector step = ldlt.solve(d.score);
    double factor = 1.0;
    detail::CoxDerivatives next;
    int halvings = 0;
    for (;;) {
      Vector cand = beta + factor * step;
      next = detail::cox_derivatives(time, event, xc, order, cand, lo, hi);
      if (std::isfinite(next.loglik) && next.loglik >= d.loglik - 1e-12 * std::abs(d.loglik)) {
        beta = cand;
        break;
      }
      if (++halvings > opt.max_halvings) {
        throw ConvergenceError("Cox fit: step-halving failed; score max-norm " +
                               std::to_string(d.score.cwiseAbs().maxCoeff()));
      }
      factor *= 0.5;
    }
    d = std::move(next);
    ++iter;
    if ((beta.cwiseProduct(scale)).cwiseAbs().maxCoeff() > opt.divergence_bound) {
      throw ConvergenceError("Cox fit: monotone likelihood, a coefficient diverges to infinity");
    }
  }
  // The score also vanishes along a diverging direction; a Newton step that
  // stays of unit size at the solution marks a monotone likelihood.
  if (p && iter > 0) {
    Eigen::LDLT<Matrix> ldlt(d.info);
    const bool flat = ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
                      ldlt.vectorD().minCoeff() <= 1e-14 * std::max(1.0, ldlt.vectorD().maxCoeff());
    if (flat || (ldlt.solve(d.score).cwiseProduct(scale)).cwiseAbs().maxCoeff() > 1e-3) {
      throw ConvergenceError("Cox fit: monotone likelihood, a coefficient diverges to infinity");
    }
  }
  fit.beta = beta;
  fit.loglik = d.loglik;
  fit.score = d.score;
  fit.iterations = iter;

  // Breslow baseline at beta-hat.
  std::vector<double> risk(n);
  for (std::size_t i = 0; i < n; ++i) risk[i] = p ? std::exp(xc.row(i).dot(beta)) : 1.0;
  double s0 = 0.0;
  std::vector<std::pair<double, double>> jumps;  // (time, increment), decreasing time
  std::size_t k = 0;
  while (k < n) {
    const double t = time[order[k]];
    std::size_t j = k;
    int deaths = 0;
    for (; j < n && time[order[j]] == t; ++j) {
      s0 += risk[order[j]];
      if (event[order[j]] && t >= lo && t < hi) ++deaths;
    }
    if (deaths) jumps.emplace_back(t, deaths / s0);
    k = j;
  }
  std::reverse(jumps.begin(), jumps.end());
  double cum = 0.0;
  for (auto& [t, inc] : jumps) {
    cum += inc;
    fit.baseline_cumhaz.times.push_back(t);
    fit.baseline_cumhaz.values.push_back(cum);
  }
  return fit;
}

}  // namespace vewane
