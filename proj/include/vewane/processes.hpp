#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "vewane/error.hpp"
#include "vewane/nuisance.hpp"
#include "vewane/record.hpp"
#include "vewane/step_function.hpp"
#include "vewane/timeline.hpp"
#include "vewane/waning.hpp"

namespace vewane {

enum class WeightMode { Unit, Estimated };

/// One participant's contribution to the blinded (b) and unblinded (u)
/// weighted counting and at-risk processes.
struct SubjectProcess {
  double entry = 0.0;
  double u = INFINITY;
  double r = 0.0;
  int arm = 0;
  int gamma = 0;
  bool crossed = false;  // placebo, gamma >= 1, psi = 1
  bool infected = false;

  BlindedWeightTerms blinded;  // sw_b(t) = exp(log_entry_ratio - L1(t) d1 - L2(t) d2)
  double sw_unblinded = 1.0;   // constant in t

  bool jump_b = false;
  bool jump_u = false;
  double jump_weight_b = 0.0;
  double jump_weight_u = 0.0;
};

/// Weighted processes for the whole sample.
///
/// Blinded at-risk indicator at t (t < T_C, E < t <= U):
///   placebo  I(R >= t);  vaccine  I(E + lag <= t <= R)
/// Unblinded at-risk indicator at t (T_P <= t <= L, E < t <= U, gamma >= 1):
///   placebo  I(psi = 1, t - R >= lag);  vaccine  I(t > R)
/// A participant's jump is active in a process when infected (U <= L) and
/// at risk in that process at t = U.
class WeightedProcesses {
 public:
  WeightedProcesses(TrialTimeline tl, WaningModelSpec spec) : tl_(tl), spec_(std::move(spec)) {}

  const TrialTimeline& timeline() const { return tl_; }
  const WaningModelSpec& spec() const { return spec_; }
  const std::vector<SubjectProcess>& subjects() const { return subjects_; }
  std::size_t size() const { return subjects_.size(); }
  WeightMode mode() const { return mode_; }
  const StepFunction& baseline_r1() const { return base_r1_; }
  const StepFunction& baseline_r2() const { return base_r2_; }

  bool at_risk_blinded(const SubjectProcess& s, double t) const {
    if (!(t < tl_.t_pdcv_end && s.entry < t && t <= s.u)) return false;
    return s.arm == 0 ? s.r >= t : (s.entry + tl_.lag <= t && t <= s.r);
  }

  bool at_risk_unblinded(const SubjectProcess& s, double t) const {
    if (!(t >= tl_.t_pfizer && t <= tl_.t_analysis && s.entry < t && t <= s.u) || s.gamma < 1) return false;
    return s.arm == 0 ? (s.crossed && t - s.r >= tl_.lag) : t > s.r;
  }

  /// log sw_b(t), given the two baseline cumulative hazards at t.
  static double blinded_log_weight(const SubjectProcess& s, double l1, double l2) {
    return s.blinded.log_entry_ratio - l1 * s.blinded.d1 - l2 * s.blinded.d2;
  }

  double blinded_weight(const SubjectProcess& s, double t) const {
    if (mode_ == WeightMode::Unit && s.blinded.log_entry_ratio == 0.0) return 1.0;
    return std::exp(blinded_log_weight(s, l1(t), l2(t)));
  }

  double l1(double t) const { return base_r1_.empty() ? 0.0 : base_r1_(std::min(t, tl_.t_pdcv_start)); }
  double l2(double t) const { return base_r2_.empty() ? 0.0 : base_r2_(t); }

  /// Waning time u entering g for the unblinded process.
  double unblinded_waning_time(const SubjectProcess& s, double t) const {
    return s.arm == 1 ? t - s.entry - tl_.lag : t - s.r - tl_.lag;
  }

  /// Z^b(t) = A (1, g_theta(t - E - lag)).
  Vector z_blinded(const SubjectProcess& s, double t) const {
    Vector z = Vector::Zero(spec_.dim_theta());
    if (s.arm == 1) {
      z(0) = 1.0;
      z.tail(spec_.dim_theta1()) = g_basis(spec_, t - s.entry - tl_.lag);
    }
    return z;
  }

  /// Z^u(t) = (0, g_theta(t - E - lag)) for vaccinees, (0, g_theta(t - R - lag)) for crossovers.
  Vector z_unblinded(const SubjectProcess& s, double t) const {
    Vector z = Vector::Zero(spec_.dim_theta());
    z.tail(spec_.dim_theta1()) = g_basis(spec_, unblinded_waning_time(s, t));
    return z;
  }

  /// Replaces the weights by constants: sw_b(t) = wb[i], sw_u = wu[i].
  void set_constant_weights(const std::vector<double>& wb, const std::vector<double>& wu) {
    if (wb.size() != subjects_.size() || wu.size() != subjects_.size()) {
      throw InvalidArgument("set_constant_weights: one weight per participant required");
    }
    base_r1_ = {};
    base_r2_ = {};
    mode_ = WeightMode::Unit;
    for (std::size_t i = 0; i < subjects_.size(); ++i) {
      if (!(wb[i] > 0.0) || !(wu[i] > 0.0)) throw InvalidArgument("weights must be positive");
      auto& s = subjects_[i];
      s.blinded = {std::log(wb[i]), 0.0, 0.0};
      s.sw_unblinded = wu[i];
      s.jump_weight_b = s.jump_b ? wb[i] : 0.0;
      s.jump_weight_u = s.jump_u ? wu[i] : 0.0;
    }
  }

 private:
  friend WeightedProcesses build_processes(const Dataset&, const TrialTimeline&, const WaningModelSpec&,
                                           const NuisanceFit*);

  TrialTimeline tl_;
  WaningModelSpec spec_;
  std::vector<SubjectProcess> subjects_;
  WeightMode mode_ = WeightMode::Unit;
  StepFunction base_r1_;
  StepFunction base_r2_;
};

/// Builds the processes; `fit == nullptr` selects unit weights.
inline WeightedProcesses build_processes(const Dataset& data, const TrialTimeline& tl, const WaningModelSpec& spec,
                                         const NuisanceFit* fit) {
  tl.validate();
  WeightedProcesses proc(tl, spec);
  proc.subjects_.reserve(data.size());
  if (fit) {
    proc.mode_ = WeightMode::Estimated;
    proc.base_r1_ = fit->cox_r1.fit.baseline_cumhaz;
    proc.base_r2_ = fit->cox_r2.fit.baseline_cumhaz;
  }
  for (const auto& rec : data.records) {
    SubjectProcess s;
    s.entry = rec.entry;
    s.u = rec.infect_time;
    s.r = rec.r_time;
    s.arm = rec.arm;
    s.gamma = rec.gamma;
    s.crossed = rec.arm == 0 && rec.gamma >= 1 && rec.psi == 1 && rec.psi_valid;
    s.infected = rec.infected == 1;
    s.jump_b = s.infected && proc.at_risk_blinded(s, s.u);
    s.jump_u = s.infected && proc.at_risk_unblinded(s, s.u);
    const bool contributes_u = s.gamma >= 1 && (s.arm == 1 || s.crossed);
    if (fit) {
      s.blinded = blinded_weight_terms(*fit, rec);
      if (contributes_u) s.sw_unblinded = stabilized_weight_unblinded(*fit, rec);
    }
    if (s.jump_b) {
      s.jump_weight_b = fit ? stabilized_weight_blinded(*fit, rec, s.u) : 1.0;
    }
    if (s.jump_u) s.jump_weight_u = s.sw_unblinded;
    proc.subjects_.push_back(s);
  }
  return proc;
}

inline WeightedProcesses build_processes(const Dataset& data, const TrialTimeline& tl, const WaningModelSpec& spec) {
  return build_processes(data, tl, spec, nullptr);
}

inline WeightedProcesses build_processes(const Dataset& data, const TrialTimeline& tl, const WaningModelSpec& spec,
                                         const NuisanceFit& fit) {
  return build_processes(data, tl, spec, &fit);
}

/// Weighted at-risk moments at one time point: sum Y~, sum Z Y~, sum Z Z^T Y~.
struct RiskSums {
  double s0 = 0.0;
  Vector s1;
  Matrix s2;

  explicit RiskSums(int dim = 0) : s1(Vector::Zero(dim)), s2(Matrix::Zero(dim, dim)) {}

  void add(double y, const Vector& z) {
    s0 += y;
    s1.noalias() += y * z;
    s2.noalias() += y * z * z.transpose();
  }
};

/// Direct evaluation over all participants of the blinded at-risk moments.
inline RiskSums at_risk_b(const WeightedProcesses& proc, double t, const Theta& theta) {
  const int d = proc.spec().dim_theta();
  RiskSums out(d);
  const Vector th = theta.as_vector();
  for (const auto& s : proc.subjects()) {
    if (!proc.at_risk_blinded(s, t)) continue;
    Vector z = proc.z_blinded(s, t);
    out.add(proc.blinded_weight(s, t) * std::exp(th.dot(z)), z);
  }
  return out;
}

/// Direct evaluation over all participants of the unblinded at-risk moments.
inline RiskSums at_risk_u(const WeightedProcesses& proc, double t, const Theta& theta) {
  const int d = proc.spec().dim_theta();
  RiskSums out(d);
  const Vector th = theta.as_vector();
  for (const auto& s : proc.subjects()) {
    if (!proc.at_risk_unblinded(s, t)) continue;
    Vector z = proc.z_unblinded(s, t);
    out.add(s.sw_unblinded * std::exp(th.dot(z)), z);
  }
  return out;
}

}  // namespace vewane
