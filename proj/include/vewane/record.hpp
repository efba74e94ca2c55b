#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "vewane/error.hpp"
#include "vewane/timeline.hpp"

namespace vewane {

/// Observed data on one participant. All times are calendar weeks.
struct ParticipantRecord {
  double entry = 0.0;               // E
  std::vector<double> covariates;   // X (site indicators included as ordinary columns)
  int arm = 0;                      // A: 0 placebo, 1 vaccine
  double infect_time = INFINITY;    // U; may exceed L (or be +inf) when uninfected
  int infected = 0;                 // Delta = I(U <= L)
  double r_time = 0.0;              // R
  int gamma = 0;                    // 0 infected first, 1 requested unblinding, 2 PDCV
  int psi = 0;                      // crossover to vaccine; only meaningful for A = 0, gamma >= 1
  bool psi_valid = true;            // false when the field was missing on input
};

struct Violation {
  std::string field;
  std::string message;
};

/// Checks every record invariant against the timeline; reports all failures.
inline std::vector<Violation> validate_record(const ParticipantRecord& rec, const TrialTimeline& tl) {
  std::vector<Violation> out;
  auto add = [&](const char* f, std::string m) { out.push_back({f, std::move(m)}); };

  if (!(rec.entry >= 0.0 && rec.entry <= tl.t_accrual)) add("entry", "E <= T_A and E >= 0 required");
  if (rec.arm != 0 && rec.arm != 1) add("arm", "arm must be 0 or 1");
  if (rec.infected != 0 && rec.infected != 1) add("delta", "delta must be 0 or 1");
  if (rec.gamma < 0 || rec.gamma > 2) add("gamma", "gamma must be 0, 1 or 2");
  if (rec.psi != 0 && rec.psi != 1) add("psi", "psi must be 0 or 1");
  if (std::isnan(rec.infect_time)) add("u", "U is NaN");
  for (double x : rec.covariates) {
    if (!std::isfinite(x)) {
      add("x", "covariates must be finite");
      break;
    }
  }

  // Boundary U = L counts as infected.
  bool should_be_infected = rec.infect_time <= tl.t_analysis;
  if ((rec.infected == 1) != should_be_infected) add("delta", "delta = 1 iff U <= L");
  if (!(rec.entry < rec.infect_time)) add("u", "E < U required");

  switch (rec.gamma) {
    case 0:
      if (rec.r_time != rec.infect_time) add("r", "gamma=0 requires R = U");
      break;
    case 1:
      if (!(rec.r_time >= tl.t_pfizer)) add("r", "gamma=1 requires R >= T_P");
      if (!(rec.r_time < tl.t_pdcv_start)) add("r", "gamma=1 requires R < T_U");
      break;
    case 2:
      if (!(rec.r_time >= tl.t_pdcv_start)) add("r", "gamma=2 requires R >= T_U");
      if (!(rec.r_time < tl.t_pdcv_end)) add("r", "gamma=2 requires R < T_C");
      break;
    default:
      break;
  }
  if (rec.gamma >= 1 && !(rec.infect_time > rec.r_time)) add("r", "gamma>=1 requires U > R");
  if (rec.arm == 0 && rec.gamma >= 1 && !rec.psi_valid) add("psi", "psi missing for an unblinded placebo participant");
  return out;
}

/// A whole trial: records plus the shared covariate width.
struct Dataset {
  std::vector<ParticipantRecord> records;
  int n_covariates = 0;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
};

/// Throws a ValidationError itemizing every violation (row-indexed).
inline void validate_dataset(const Dataset& data, const TrialTimeline& tl, std::size_t max_listed = 20) {
  tl.validate();
  if (data.empty()) throw ValidationError("dataset has no participants");
  std::string msg;
  std::size_t count = 0;
  for (std::size_t i = 0; i < data.records.size(); ++i) {
    const auto& rec = data.records[i];
    std::vector<Violation> v = validate_record(rec, tl);
    if (static_cast<int>(rec.covariates.size()) != data.n_covariates) {
      v.push_back({"x", "covariate vector has " + std::to_string(rec.covariates.size()) + " entries, expected " +
                            std::to_string(data.n_covariates)});
    }
    for (auto& e : v) {
      if (count < max_listed) msg += "\n  row " + std::to_string(i) + " [" + e.field + "]: " + e.message;
      ++count;
    }
  }
  if (count > 0) {
    throw ValidationError("dataset failed validation with " + std::to_string(count) + " violation(s):" + msg);
  }
}

}  // namespace vewane
