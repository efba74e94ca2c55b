#pragma once

#include <string>
#include <vector>

#include "vewane/error.hpp"

namespace vewane {

/// Calendar milestones of the trial, all in weeks since the trial opened.
///
/// Defaults reproduce the simulation setting: accrual closes at week 12,
/// the first emergency authorization lands at 19, participant decision
/// visits run over [21, 31) and the analysis happens at week 52.
struct TrialTimeline {
  double t_accrual = 12.0;     // T_A
  double t_pfizer = 19.0;      // T_P, requested unblinding opens
  double t_pdcv_start = 21.0;  // T_U
  double t_pdcv_end = 31.0;    // T_C, everyone unblinded by here
  double t_analysis = 52.0;    // L
  double lag = 6.0;            // weeks from first dose to full efficacy
  double p_assign = 0.5;       // pr(A = 1)

  /// Every violated constraint, empty when the timeline is usable.
  std::vector<std::string> violations() const {
    std::vector<std::string> out;
    if (!(t_accrual > 0.0)) out.emplace_back("T_A must be > 0");
    if (!(t_accrual < t_pfizer)) out.emplace_back("T_A must be < T_P");
    if (!(t_pfizer < t_pdcv_start)) out.emplace_back("T_P must be < T_U");
    if (!(t_pdcv_start < t_pdcv_end)) out.emplace_back("T_U must be < T_C");
    if (!(t_pdcv_end <= t_analysis)) out.emplace_back("T_C must be <= L");
    if (!(lag >= 0.0)) out.emplace_back("lag must be >= 0");
    if (!(t_pfizer - t_accrual > lag)) out.emplace_back("T_P - T_A must exceed the lag");
    if (!(p_assign > 0.0 && p_assign < 1.0)) out.emplace_back("p_A must lie in (0, 1)");
    return out;
  }

  void validate() const {
    auto v = violations();
    if (v.empty()) return;
    std::string msg = "invalid trial timeline:";
    for (auto& s : v) msg += " " + s + ";";
    throw ValidationError(msg);
  }
};

}  // namespace vewane
