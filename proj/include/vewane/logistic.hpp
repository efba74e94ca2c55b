#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include "vewane/cox.hpp"
#include "vewane/error.hpp"
#include "vewane/waning.hpp"

namespace vewane {

inline double expit(double u) {
  return u >= 0 ? 1.0 / (1.0 + std::exp(-u)) : std::exp(u) / (1.0 + std::exp(u));
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

struct LogisticFit {
  Vector coef;
  double loglik = 0.0;
  Vector gradient;
  int iterations = 0;

  double probability(const Vector& row) const { return expit(row.dot(coef)); }
};

namespace detail {

inline double log1pexp(double u) { return u > 0 ? u + std::log1p(std::exp(-u)) : std::log1p(std::exp(u)); }

inline double logistic_loglik(const std::vector<int>& y, const Matrix& x, const Vector& coef) {
  Vector eta = x * coef;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) ll += y[static_cast<std::size_t>(i)] * eta(i) - log1pexp(eta(i));
  return ll;
}

}  // namespace detail

/// Maximum likelihood logistic regression by Newton-Raphson from zero.
///
/// The design must already hold any intercept columns. Rank-deficient
/// designs throw IdentifiabilityError; a linear predictor running off to
/// +-infinity (complete or quasi separation) throws ConvergenceError.
inline LogisticFit fit_logistic(const std::vector<int>& y, const Matrix& x, const NewtonOptions& opt = {}) {
  const Eigen::Index n = x.rows(), p = x.cols();
  if (static_cast<Eigen::Index>(y.size()) != n) throw InvalidArgument("fit_logistic: response/design length mismatch");
  if (n == 0 || p == 0) throw InvalidArgument("fit_logistic: empty design");
  for (int v : y) {
    if (v != 0 && v != 1) throw InvalidArgument("fit_logistic: response must be 0/1");
  }
  Eigen::ColPivHouseholderQR<Matrix> qr(x);
  if (qr.rank() < p) {
    throw IdentifiabilityError("fit_logistic: design matrix is rank deficient (rank " + std::to_string(qr.rank()) +
                               " < " + std::to_string(p) + ")");
  }
  Vector yv(n);
  for (Eigen::Index i = 0; i < n; ++i) yv(i) = y[static_cast<std::size_t>(i)];

  Vector coef = Vector::Zero(p);
  double ll = detail::logistic_loglik(y, x, coef);
  int iter = 0;
  for (;;) {
    Vector eta = x * coef;
    Vector mu(n), w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      mu(i) = expit(eta(i));
      w(i) = mu(i) * (1.0 - mu(i));
    }
    Vector grad = x.transpose() * (yv - mu);
    if (grad.cwiseAbs().maxCoeff() < opt.tol) {
      LogisticFit fit;
      fit.coef = coef;
      fit.loglik = ll;
      fit.gradient = grad;
      fit.iterations = iter;
      return fit;
    }
    if (eta.cwiseAbs().maxCoeff() > 2.0 * opt.divergence_bound) {
      throw ConvergenceError("fit_logistic: separation, fitted probabilities approach 0 or 1");
    }
    if (iter >= opt.max_iter) {
      throw ConvergenceError("fit_logistic did not converge in " + std::to_string(opt.max_iter) +
                             " iterations; gradient max-norm " + std::to_string(grad.cwiseAbs().maxCoeff()));
    }
    Matrix info = x.transpose() * w.asDiagonal() * x;
    Eigen::LDLT<Matrix> ldlt(info);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
        ldlt.vectorD().minCoeff() <= 1e-14 * std::max(1.0, ldlt.vectorD().maxCoeff())) {
      throw ConvergenceError("fit_logistic: separation, information matrix degenerates");
    }
    Vector step = ldlt.solve(grad);
    double factor = 1.0;
    int halvings = 0;
    for (;;) {
      Vector cand = coef + factor * step;
      double cll = detail::logistic_loglik(y, x, cand);
      if (std::isfinite(cll) && cll >= ll - 1e-12 * std::abs(ll)) {
        coef = cand;
        ll = cll;
        break;
      }
      if (++halvings > opt.max_halvings) {
        throw ConvergenceError("fit_logistic: step-halving failed; gradient max-norm " +
                               std::to_string(grad.cwiseAbs().maxCoeff()));
      }
      factor *= 0.5;
    }
    ++iter;
  }
}

}  // namespace vewane
