#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "vewane/cox.hpp"
#include "vewane/error.hpp"
#include "vewane/logistic.hpp"
#include "vewane/record.hpp"
#include "vewane/timeline.hpp"

namespace vewane {

/// Columns entering a proportional-hazards linear predictor:
/// X, then optionally A, then optionally X*A.
struct LinearPredictorSpec {
  bool include_arm = false;
  bool arm_interactions = false;

  int width(int n_cov) const { return n_cov + (include_arm ? 1 : 0) + (arm_interactions ? n_cov : 0); }

  Vector row(const std::vector<double>& x, int arm) const {
    const int k = static_cast<int>(x.size());
    Vector r(width(k));
    int c = 0;
    for (int j = 0; j < k; ++j) r(c++) = x[j];
    if (include_arm) r(c++) = arm;
    if (arm_interactions) {
      for (int j = 0; j < k; ++j) r(c++) = x[j] * arm;
    }
    return r;
  }

  bool operator==(const LinearPredictorSpec&) const = default;
};

/// A Cox fit together with the design that produced its columns.
struct HazardModel {
  CoxFit fit;
  LinearPredictorSpec design;

  double linear_predictor(const std::vector<double>& x, int arm) const {
    return fit.beta.size() ? fit.linear_predictor(design.row(x, arm)) : 0.0;
  }
  double relative_risk(const std::vector<double>& x, int arm) const { return std::exp(linear_predictor(x, arm)); }
  double baseline(double t) const { return fit.baseline_cumhaz(t); }
};

/// Agreement model p_psi(X, gamma): separate intercept and X-slopes for the
/// gamma = 1 and gamma = 2 strata, fitted on unblinded placebo participants.
struct AgreementModel {
  LogisticFit fit;
  int n_cov = 0;
  bool stratum_present[2] = {false, false};

  Vector row(const std::vector<double>& x, int gamma) const {
    const int per = n_cov + 1;
    const int n_strata = static_cast<int>(stratum_present[0]) + static_cast<int>(stratum_present[1]);
    Vector r = Vector::Zero(per * n_strata);
    if (gamma < 1 || gamma > 2 || !stratum_present[gamma - 1]) {
      throw InvalidArgument("agreement model has no stratum for gamma = " + std::to_string(gamma));
    }
    int offset = (gamma == 2 && stratum_present[0]) ? per : 0;
    r(offset) = 1.0;
    for (int j = 0; j < n_cov; ++j) r(offset + 1 + j) = x[j];
    return r;
  }

  double linear_predictor(const std::vector<double>& x, int gamma) const { return row(x, gamma).dot(fit.coef); }
  double probability(const std::vector<double>& x, int gamma) const { return expit(linear_predictor(x, gamma)); }
};

/// Fitted nuisance models used to build stabilized weights.
struct NuisanceFit {
  TrialTimeline timeline;
  HazardModel cox_r1;     // requested unblinding on [T_P, T_U)
  HazardModel cox_r2;     // PDCV unblinding on [T_U, T_C)
  HazardModel cox_entry;  // entry time given X
  AgreementModel logit_psi;
  std::vector<double> x_ref;

  /// Sets every regression coefficient to zero, keeping baselines.
  void zero_coefficients() {
    cox_r1.fit.beta.setZero();
    cox_r2.fit.beta.setZero();
    cox_entry.fit.beta.setZero();
    logit_psi.fit.coef.setZero();
  }
};

enum class ReferenceCovariates { AllSubjects, PlaceboSubjects };

struct NuisanceOptions {
  ReferenceCovariates x_ref_mode = ReferenceCovariates::AllSubjects;
  std::vector<double> x_ref;  // overrides x_ref_mode when non-empty
  LinearPredictorSpec r1_design{true, true};
  LinearPredictorSpec r2_design{false, false};
  LinearPredictorSpec entry_design{false, false};
  NewtonOptions newton;
};

namespace detail {

inline HazardModel fit_hazard_model(const std::vector<double>& time, const std::vector<int>& event,
                                    const Dataset& data, const LinearPredictorSpec& design, double lo, double hi,
                                    const NewtonOptions& opt) {
  const int w = design.width(data.n_covariates);
  Matrix x(static_cast<Eigen::Index>(data.size()), w);
  for (std::size_t i = 0; i < data.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) = design.row(data.records[i].covariates, data.records[i].arm).transpose();
  }
  HazardModel m;
  m.design = design;
  bool any = false;
  for (std::size_t i = 0; i < time.size(); ++i) any = any || (event[i] && time[i] >= lo && time[i] < hi);
  if (!any) {
    // No events: the cause-specific hazard is estimated as identically zero.
    m.fit.beta = Vector::Zero(w);
    m.fit.center = Vector::Zero(w);
    m.fit.window_lo = lo;
    m.fit.window_hi = hi;
    return m;
  }
  m.fit = fit_cox(time, event, x, lo, hi, opt);
  return m;
}

}  // namespace detail

inline std::vector<double> reference_covariates(const Dataset& data, ReferenceCovariates mode) {
  std::vector<double> m(static_cast<std::size_t>(data.n_covariates), 0.0);
  std::size_t count = 0;
  for (const auto& r : data.records) {
    if (mode == ReferenceCovariates::PlaceboSubjects && r.arm != 0) continue;
    for (int j = 0; j < data.n_covariates; ++j) m[j] += r.covariates[j];
    ++count;
  }
  if (count == 0) throw InvalidArgument("no subjects available for the reference covariate mean");
  for (auto& v : m) v /= static_cast<double>(count);
  return m;
}

/// Fits the entry, unblinding and agreement models.
///
/// Unblinding fits use (R, I(gamma = j)); participants infected before
/// unblinding (gamma = 0) are censored at R = U, and participants still
/// blinded at T_U are censored in the j = 1 fit by the window.
inline NuisanceFit fit_nuisance(const Dataset& data, const TrialTimeline& tl, const NuisanceOptions& opt = {}) {
  tl.validate();
  if (data.empty()) throw InvalidArgument("fit_nuisance: empty dataset");
  NuisanceFit nf;
  nf.timeline = tl;
  nf.x_ref = opt.x_ref.empty() ? reference_covariates(data, opt.x_ref_mode) : opt.x_ref;
  if (static_cast<int>(nf.x_ref.size()) != data.n_covariates) {
    throw InvalidArgument("x_ref has the wrong dimension");
  }
  const std::size_t n = data.size();
  std::vector<double> r_time(n), entry(n);
  std::vector<int> ev1(n), ev2(n), all(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = data.records[i];
    r_time[i] = r.r_time;
    entry[i] = r.entry;
    ev1[i] = r.gamma == 1;
    ev2[i] = r.gamma == 2;
  }
  nf.cox_entry = detail::fit_hazard_model(entry, all, data, opt.entry_design, -INFINITY, INFINITY, opt.newton);
  nf.cox_r1 = detail::fit_hazard_model(r_time, ev1, data, opt.r1_design, tl.t_pfizer, tl.t_pdcv_start, opt.newton);
  nf.cox_r2 = detail::fit_hazard_model(r_time, ev2, data, opt.r2_design, tl.t_pdcv_start, tl.t_pdcv_end, opt.newton);

  AgreementModel& am = nf.logit_psi;
  am.n_cov = data.n_covariates;
  std::vector<const ParticipantRecord*> rows;
  for (const auto& r : data.records) {
    if (r.arm == 0 && r.gamma >= 1 && r.psi_valid) {
      rows.push_back(&r);
      am.stratum_present[r.gamma - 1] = true;
    }
  }
  if (!rows.empty()) {
    const int per = am.n_cov + 1;
    const int width = per * (static_cast<int>(am.stratum_present[0]) + static_cast<int>(am.stratum_present[1]));
    Matrix x(static_cast<Eigen::Index>(rows.size()), width);
    std::vector<int> y(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      x.row(static_cast<Eigen::Index>(i)) = am.row(rows[i]->covariates, rows[i]->gamma).transpose();
      y[i] = rows[i]->psi;
    }
    am.fit = fit_logistic(y, x, opt.newton);
  }
  return nf;
}

/// K_R(t | x, a): probability of still being blinded at calendar time t.
inline double survival_KR(const NuisanceFit& fit, double t, const std::vector<double>& x, int arm) {
  const auto& tl = fit.timeline;
  if (t < tl.t_pfizer) return 1.0;
  if (t >= tl.t_pdcv_end) return 0.0;
  double h = fit.cox_r1.baseline(std::min(t, tl.t_pdcv_start)) * fit.cox_r1.relative_risk(x, arm);
  if (t >= tl.t_pdcv_start) h += fit.cox_r2.baseline(t) * fit.cox_r2.relative_risk(x, arm);
  return std::exp(-h);
}

/// Per-participant decomposition of the blinded stabilized weight:
///   log sw(t) = log_entry_ratio - Lambda01(t) d1 - Lambda02(t) d2,
/// with d_j = rho_j(x_ref, A) - rho_j(X, A) and rho_j the relative risks.
struct BlindedWeightTerms {
  double log_entry_ratio = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;
};

inline double log_entry_density_ratio(const NuisanceFit& fit, const ParticipantRecord& rec) {
  const auto& m = fit.cox_entry;
  const double eta_ref = m.linear_predictor(fit.x_ref, rec.arm);
  const double eta = m.linear_predictor(rec.covariates, rec.arm);
  return (eta_ref - eta) - m.baseline(rec.entry) * (std::exp(eta_ref) - std::exp(eta));
}

inline BlindedWeightTerms blinded_weight_terms(const NuisanceFit& fit, const ParticipantRecord& rec) {
  BlindedWeightTerms w;
  w.log_entry_ratio = log_entry_density_ratio(fit, rec);
  w.d1 = fit.cox_r1.relative_risk(fit.x_ref, rec.arm) - fit.cox_r1.relative_risk(rec.covariates, rec.arm);
  w.d2 = fit.cox_r2.relative_risk(fit.x_ref, rec.arm) - fit.cox_r2.relative_risk(rec.covariates, rec.arm);
  return w;
}

/// h_A(t, E | x_ref) / h_A(t, E | X); p_A cancels.
inline double stabilized_weight_blinded(const NuisanceFit& fit, const ParticipantRecord& rec, double t) {
  const auto& tl = fit.timeline;
  if (t >= tl.t_pdcv_end) {
    throw PositivityError("blinded weight requested at t >= T_C where K_R(t | X, A) = 0");
  }
  auto w = blinded_weight_terms(fit, rec);
  double log_k = 0.0;
  if (t >= tl.t_pfizer) log_k -= fit.cox_r1.baseline(std::min(t, tl.t_pdcv_start)) * w.d1;
  if (t >= tl.t_pdcv_start) log_k -= fit.cox_r2.baseline(t) * w.d2;
  double sw = std::exp(w.log_entry_ratio + log_k);
  if (!std::isfinite(sw) || !(sw > 0.0)) throw PositivityError("blinded stabilized weight is not finite and positive");
  return sw;
}

/// h_{A1}(E, R | x_ref) / h_{A1}(E, R | X) for an unblinded participant.
/// Only the cause gamma density enters since f_R1 and f_R2 have disjoint
/// supports; the agreement ratio enters for placebo crossovers.
inline double stabilized_weight_unblinded(const NuisanceFit& fit, const ParticipantRecord& rec) {
  if (rec.gamma < 1) throw InvalidArgument("unblinded weight requires gamma >= 1");
  if (rec.arm == 0 && rec.psi != 1) throw InvalidArgument("unblinded placebo weight requires psi = 1");
  const auto& tl = fit.timeline;
  const HazardModel& cause = rec.gamma == 1 ? fit.cox_r1 : fit.cox_r2;
  double log_w = log_entry_density_ratio(fit, rec);
  log_w += cause.linear_predictor(fit.x_ref, rec.arm) - cause.linear_predictor(rec.covariates, rec.arm);
  const double t = rec.r_time;
  if (t >= tl.t_pdcv_end) throw PositivityError("unblinding time at or after T_C");
  if (t >= tl.t_pfizer) {
    log_w -= fit.cox_r1.baseline(std::min(t, tl.t_pdcv_start)) *
             (fit.cox_r1.relative_risk(fit.x_ref, rec.arm) - fit.cox_r1.relative_risk(rec.covariates, rec.arm));
  }
  if (t >= tl.t_pdcv_start) {
    log_w -= fit.cox_r2.baseline(t) *
             (fit.cox_r2.relative_risk(fit.x_ref, rec.arm) - fit.cox_r2.relative_risk(rec.covariates, rec.arm));
  }
  double ratio = std::exp(log_w);
  if (rec.arm == 0) {
    const double p_own = fit.logit_psi.probability(rec.covariates, rec.gamma);
    if (!(p_own > 0.0)) throw PositivityError("estimated agreement probability is zero");
    ratio *= fit.logit_psi.probability(fit.x_ref, rec.gamma) / p_own;
  }
  if (!std::isfinite(ratio) || !(ratio > 0.0)) {
    throw PositivityError("unblinded stabilized weight is not finite and positive");
  }
  return ratio;
}

}  // namespace vewane
