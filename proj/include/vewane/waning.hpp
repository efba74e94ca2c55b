#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "vewane/error.hpp"

namespace vewane {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class WaningKind { Linear, PiecewiseConstant };

/// Shape of the waning term g(u; theta1), u = time since full efficacy.
///
/// Linear:             g(u) = theta1 * u                      (one parameter)
/// PiecewiseConstant:  knots v1 < ... < vk, one level per interval past
///                     each knot; g(u) = theta1[j] for v_{j+1} < u <= v_{j+2}
///                     and theta1[k-1] for u > vk.
///
/// Both shapes are linear in theta1, so g(u; theta1) = theta1 . grad(u).
class WaningModelSpec {
 public:
  static WaningModelSpec linear() { return WaningModelSpec(WaningKind::Linear, {}); }

  static WaningModelSpec piecewise(std::vector<double> knots) {
    if (knots.empty()) throw InvalidArgument("piecewise waning model needs at least one knot");
    for (std::size_t i = 1; i < knots.size(); ++i) {
      if (!(knots[i] > knots[i - 1])) throw InvalidArgument("waning knots must be strictly increasing");
    }
    for (double v : knots) {
      if (!(v >= 0.0)) throw InvalidArgument("waning knots must be nonnegative");
    }
    return WaningModelSpec(WaningKind::PiecewiseConstant, std::move(knots));
  }

  WaningKind kind() const { return kind_; }
  const std::vector<double>& knots() const { return knots_; }
  int dim_theta1() const { return kind_ == WaningKind::Linear ? 1 : static_cast<int>(knots_.size()); }
  int dim_theta() const { return 1 + dim_theta1(); }
  bool is_piecewise() const { return kind_ == WaningKind::PiecewiseConstant; }

  /// Knot constraint relative to the analysis time L.
  void check_knots_within(double t_analysis) const {
    for (double v : knots_) {
      if (v > t_analysis) throw InvalidArgument("waning knot beyond the analysis time");
    }
  }

  /// Number of knots strictly below u; 0 means g(u) = 0 for piecewise shapes.
  int segment(double u) const {
    return static_cast<int>(std::lower_bound(knots_.begin(), knots_.end(), u) - knots_.begin());
  }

  std::string describe() const {
    if (kind_ == WaningKind::Linear) return "linear";
    std::string s = "piecewise(";
    for (std::size_t i = 0; i < knots_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(knots_[i]);
    }
    return s + ")";
  }

  bool operator==(const WaningModelSpec& o) const { return kind_ == o.kind_ && knots_ == o.knots_; }

 private:
  WaningModelSpec(WaningKind k, std::vector<double> knots) : kind_(k), knots_(std::move(knots)) {}

  WaningKind kind_;
  std::vector<double> knots_;
};

/// theta = (theta0, theta1^T)^T; theta0 is the log rate ratio at full efficacy.
struct Theta {
  double theta0 = 0.0;
  Vector theta1;

  static Theta zeros(const WaningModelSpec& spec) { return {0.0, Vector::Zero(spec.dim_theta1())}; }

  static Theta from_vector(const Vector& v) {
    Theta t;
    t.theta0 = v(0);
    t.theta1 = v.tail(v.size() - 1);
    return t;
  }

  Vector as_vector() const {
    Vector v(1 + theta1.size());
    v(0) = theta0;
    v.tail(theta1.size()) = theta1;
    return v;
  }
};

inline void check_dim(const WaningModelSpec& spec, const Vector& theta1) {
  if (theta1.size() != spec.dim_theta1()) {
    throw InvalidArgument("theta1 has dimension " + std::to_string(theta1.size()) + ", model expects " +
                          std::to_string(spec.dim_theta1()));
  }
}

/// d g(u; theta1) / d theta1, which does not depend on theta1.
inline Vector g_basis(const WaningModelSpec& spec, double u) {
  Vector out = Vector::Zero(spec.dim_theta1());
  if (spec.kind() == WaningKind::Linear) {
    out(0) = u;
    return out;
  }
  int s = spec.segment(u);
  if (s > 0) out(s - 1) = 1.0;
  return out;
}

inline Vector g_grad(const WaningModelSpec& spec, const Vector& theta1, double u) {
  check_dim(spec, theta1);
  return g_basis(spec, u);
}

inline double g_value(const WaningModelSpec& spec, const Vector& theta1, double u) {
  check_dim(spec, theta1);
  if (spec.kind() == WaningKind::Linear) return theta1(0) * u;
  int s = spec.segment(u);
  return s > 0 ? theta1(s - 1) : 0.0;
}

/// VE(tau) = 1 - exp{theta0 + g(tau - lag; theta1)} for tau >= lag.
inline double ve_from_theta(const Theta& theta, const WaningModelSpec& spec, double tau, double lag) {
  if (tau < lag) {
    throw InvalidArgument("VE is only modelled after full efficacy (tau >= lag)");
  }
  return 1.0 - std::exp(theta.theta0 + g_value(spec, theta.theta1, tau - lag));
}

}  // namespace vewane
