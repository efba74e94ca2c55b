#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <istream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "vewane/csv.hpp"
#include "vewane/error.hpp"
#include "vewane/pipeline.hpp"
#include "vewane/simulation.hpp"

namespace vewane {

inline std::string weight_mode_name(WeightMode m) { return m == WeightMode::Unit ? "unit" : "estimated"; }

inline WeightMode parse_weight_mode(const std::string& s) {
  if (s == "unit") return WeightMode::Unit;
  if (s == "estimated") return WeightMode::Estimated;
  throw InvalidArgument("weight mode must be 'unit' or 'estimated', got '" + s + "'");
}

struct McStudyConfig {
  ScenarioConfig scenario;
  std::vector<WeightMode> weight_modes{WeightMode::Unit};
  int replications = 1;
  unsigned threads = 1;
  std::uint64_t seed = 1;
  AnalysisOptions analysis;  // spec, weights and taus are set per study
  double max_failure_fraction = 0.05;
  std::function<void(int done, int total)> progress;  // called from worker threads
};

/// Monte Carlo estimands: theta1 (last coordinate), VE just before and just
/// after the last waning knot.
struct EstimandTargets {
  std::vector<std::string> names;
  std::vector<double> truth;
  double tau_le = 0.0;
  double tau_gt = 0.0;
};

inline std::string format_knot(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

inline EstimandTargets estimand_targets(const ScenarioConfig& sc) {
  const double v = sc.waning.knots().back();
  const double lag = sc.timeline.lag;
  EstimandTargets t;
  t.tau_le = lag + v;
  t.tau_gt = lag + v + 1.0;
  t.names = {"theta1", "VE_le_" + format_knot(v), "VE_gt_" + format_knot(v)};
  t.truth = {sc.theta1(sc.theta1.size() - 1), ve_from_theta(sc.theta_true(), sc.waning, t.tau_le, lag),
             ve_from_theta(sc.theta_true(), sc.waning, t.tau_gt, lag)};
  return t;
}

/// One replication under one weight mode.
struct ReplicateResult {
  int replication = 0;
  WeightMode mode = WeightMode::Unit;
  bool ok = false;
  std::string failure;
  double estimate[3] = {0, 0, 0};
  double se[3] = {0, 0, 0};
  bool covered[3] = {false, false, false};
  bool reject = false;
  double theta0 = 0.0;
  int iterations = 0;
};

struct EstimandSummary {
  std::string name;
  double truth = 0.0;
  int n = 0;
  double mean = 0.0;
  double median = 0.0;
  std::optional<double> sd;  // absent with fewer than two estimates
  double mean_se = 0.0;
  double coverage = 0.0;

  bool operator==(const EstimandSummary&) const = default;
};

struct WeightModeSummary {
  WeightMode mode = WeightMode::Unit;
  int successes = 0;
  int failures = 0;
  double rejection_rate = 0.0;       // one-sided waning test
  std::optional<double> type1_error;  // rejection rate when the true theta1 is 0
  std::vector<EstimandSummary> estimands;

  bool operator==(const WeightModeSummary&) const = default;
};

struct MonteCarloSummary {
  std::string scenario;
  int replications = 0;
  std::uint64_t seed = 0;
  std::size_t n_subjects = 0;
  double alpha = 0.05;
  std::vector<WeightModeSummary> blocks;

  bool operator==(const MonteCarloSummary&) const = default;
};

struct McStudyOutput {
  MonteCarloSummary summary;
  std::vector<ReplicateResult> replicates;  // ordered by (replication, mode)
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) return NAN;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

/// Aggregates replicate results in the order given.
inline WeightModeSummary summarize_mode(WeightMode mode, const std::vector<const ReplicateResult*>& reps,
                                        const EstimandTargets& targets) {
  WeightModeSummary s;
  s.mode = mode;
  int rejections = 0;
  std::vector<std::vector<double>> est(3), ses(3);
  std::vector<int> cov(3, 0);
  for (const auto* r : reps) {
    if (!r->ok) {
      ++s.failures;
      continue;
    }
    ++s.successes;
    rejections += r->reject ? 1 : 0;
    for (int k = 0; k < 3; ++k) {
      est[k].push_back(r->estimate[k]);
      ses[k].push_back(r->se[k]);
      cov[k] += r->covered[k] ? 1 : 0;
    }
  }
  if (s.successes > 0) s.rejection_rate = static_cast<double>(rejections) / s.successes;
  if (targets.truth[0] == 0.0 && s.successes > 0) s.type1_error = s.rejection_rate;
  for (int k = 0; k < 3; ++k) {
    EstimandSummary e;
    e.name = targets.names[k];
    e.truth = targets.truth[k];
    e.n = static_cast<int>(est[k].size());
    if (e.n > 0) {
      double sum = 0.0, sum_se = 0.0;
      for (std::size_t i = 0; i < est[k].size(); ++i) {
        sum += est[k][i];
        sum_se += ses[k][i];
      }
      e.mean = sum / e.n;
      e.mean_se = sum_se / e.n;
      e.median = median_of(est[k]);
      e.coverage = static_cast<double>(cov[k]) / e.n;
      if (e.n > 1) {
        double ss = 0.0;
        for (double x : est[k]) ss += (x - e.mean) * (x - e.mean);
        e.sd = std::sqrt(ss / (e.n - 1));
      }
    }
    s.estimands.push_back(e);
  }
  return s;
}

/// Analyses one generated dataset under one weight mode.
inline ReplicateResult analyse_replicate(const Dataset& data, const McStudyConfig& cfg, WeightMode mode,
                                         int replication, const EstimandTargets& targets) {
  ReplicateResult r;
  r.replication = replication;
  r.mode = mode;
  try {
    AnalysisOptions opt = cfg.analysis;
    opt.spec = cfg.scenario.waning;
    opt.weights = mode;
    opt.taus = {targets.tau_le, targets.tau_gt};
    opt.validate = false;
    const AnalysisOutput out = estimate_dataset(data, cfg.scenario.timeline, opt);
    const auto& res = out.result;
    const int last = static_cast<int>(res.theta_hat.theta1.size());
    r.estimate[0] = res.theta_hat.theta1(last - 1);
    r.se[0] = std::sqrt(std::max(0.0, res.cov(last, last)));
    r.covered[0] = std::abs(r.estimate[0] - targets.truth[0]) <= 1.959963984540054 * r.se[0];
    for (int k = 1; k < 3; ++k) {
      const auto& ve = res.ve_estimates[static_cast<std::size_t>(k - 1)];
      r.estimate[k] = ve.point;
      r.se[k] = ve.se;
      r.covered[k] = ve.lower <= targets.truth[k] && targets.truth[k] <= ve.upper;
    }
    r.reject = res.wald_waning.reject;
    r.theta0 = res.theta_hat.theta0;
    r.iterations = res.iterations;
    r.ok = true;
  } catch (const Error& e) {
    r.failure = e.what();
  }
  return r;
}

/// Runs the study on a pool of worker threads. Replication k uses dataset
/// seed (seed, k) for every weight mode, and results are reduced in
/// replication order, so the summary does not depend on the thread count.
inline McStudyOutput run_mc_study(const McStudyConfig& cfg) {
  cfg.scenario.validate();
  if (cfg.replications < 1) throw InvalidArgument("replications must be >= 1");
  if (cfg.weight_modes.empty()) throw InvalidArgument("at least one weight mode is required");
  const EstimandTargets targets = estimand_targets(cfg.scenario);
  const int R = cfg.replications;
  const std::size_t M = cfg.weight_modes.size();
  std::vector<ReplicateResult> results(static_cast<std::size_t>(R) * M);

  std::atomic<int> next{0}, done{0};
  std::mutex progress_mu;
  auto worker = [&] {
    for (int k = next++; k < R; k = next++) {
      const Dataset data = generate_dataset(cfg.scenario, cfg.scenario.n, cfg.seed, static_cast<std::uint64_t>(k));
      for (std::size_t m = 0; m < M; ++m) {
        results[static_cast<std::size_t>(k) * M + m] = analyse_replicate(data, cfg, cfg.weight_modes[m], k, targets);
      }
      const int d = ++done;
      if (cfg.progress) {
        std::lock_guard<std::mutex> lock(progress_mu);
        cfg.progress(d, R);
      }
    }
  };
  const unsigned T = std::max(1u, std::min<unsigned>(cfg.threads, static_cast<unsigned>(R)));
  if (T == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < T; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  McStudyOutput out;
  out.replicates = std::move(results);
  auto& s = out.summary;
  s.scenario = cfg.scenario.name;
  s.replications = R;
  s.seed = cfg.seed;
  s.n_subjects = cfg.scenario.n;
  s.alpha = cfg.analysis.alpha;
  for (std::size_t m = 0; m < M; ++m) {
    std::vector<const ReplicateResult*> reps;
    for (int k = 0; k < R; ++k) reps.push_back(&out.replicates[static_cast<std::size_t>(k) * M + m]);
    s.blocks.push_back(summarize_mode(cfg.weight_modes[m], reps, targets));
    const auto& b = s.blocks.back();
    if (b.failures > cfg.max_failure_fraction * R) {
      std::string reason;
      for (const auto* r : reps) {
        if (!r->ok) {
          reason = r->failure;
          break;
        }
      }
      throw Error("Monte Carlo study failed: " + std::to_string(b.failures) + " of " + std::to_string(R) +
                  " replications failed with " + weight_mode_name(b.mode) + " weights (first: " + reason + ")");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tables

enum class TableFormat { Text, Csv, Json };

inline std::vector<std::string> summary_csv_columns() {
  return {"scenario", "replications", "seed",     "n_subjects", "alpha",  "weights",       "successes",
          "failures", "rejection",    "type1",    "estimand",   "truth",  "n",             "mean",
          "median",   "sd",           "se",       "coverage"};
}

inline std::string summary_to_csv(const MonteCarloSummary& s) {
  using detail::format_double;
  std::ostringstream os;
  const auto cols = summary_csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << "\n";
  for (const auto& b : s.blocks) {
    for (const auto& e : b.estimands) {
      os << s.scenario << "," << s.replications << "," << s.seed << "," << s.n_subjects << ","
         << format_double(s.alpha) << "," << weight_mode_name(b.mode) << "," << b.successes << "," << b.failures
         << "," << format_double(b.rejection_rate) << "," << (b.type1_error ? format_double(*b.type1_error) : "")
         << "," << e.name << "," << format_double(e.truth) << "," << e.n << "," << format_double(e.mean) << ","
         << format_double(e.median) << "," << (e.sd ? format_double(*e.sd) : "") << "," << format_double(e.mean_se)
         << "," << format_double(e.coverage) << "\n";
    }
  }
  return os.str();
}

inline MonteCarloSummary summary_from_csv(std::istream& in) {
  using namespace detail;
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("summary CSV is empty");
  const auto header = split_csv_line(trim(line));
  const auto cols = summary_csv_columns();
  if (header.size() != cols.size()) throw ValidationError("summary CSV header has the wrong number of columns");
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (trim(header[i]) != cols[i]) {
      throw ValidationError("summary CSV column " + std::to_string(i + 1) + " should be " + cols[i]);
    }
  }
  MonteCarloSummary s;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != cols.size()) {
      throw ValidationError("line " + std::to_string(line_no) + ": expected " + std::to_string(cols.size()) + " fields");
    }
    if (line_no == 2) {
      s.scenario = f[0];
      s.replications = parse_int(f[1], line_no, "replications");
      s.seed = std::stoull(trim(f[2]));
      s.n_subjects = static_cast<std::size_t>(std::stoull(trim(f[3])));
      s.alpha = parse_double(f[4], line_no, "alpha");
    }
    const WeightMode mode = parse_weight_mode(trim(f[5]));
    if (s.blocks.empty() || s.blocks.back().mode != mode) {
      WeightModeSummary b;
      b.mode = mode;
      b.successes = parse_int(f[6], line_no, "successes");
      b.failures = parse_int(f[7], line_no, "failures");
      b.rejection_rate = parse_double(f[8], line_no, "rejection");
      if (!trim(f[9]).empty()) b.type1_error = parse_double(f[9], line_no, "type1");
      s.blocks.push_back(b);
    }
    EstimandSummary e;
    e.name = trim(f[10]);
    e.truth = parse_double(f[11], line_no, "truth");
    e.n = parse_int(f[12], line_no, "n");
    e.mean = parse_double(f[13], line_no, "mean");
    e.median = parse_double(f[14], line_no, "median");
    if (!trim(f[15]).empty()) e.sd = parse_double(f[15], line_no, "sd");
    e.mean_se = parse_double(f[16], line_no, "se");
    e.coverage = parse_double(f[17], line_no, "coverage");
    s.blocks.back().estimands.push_back(e);
  }
  return s;
}

/// Text table: one row per estimand, Mean Med SD SE Cov per weight mode.
inline std::string summary_to_text(const MonteCarloSummary& s) {
  std::ostringstream os;
  char buf[256];
  os << "scenario " << s.scenario << ", " << s.replications << " replications, n = " << s.n_subjects
     << ", seed " << s.seed << "\n";
  os << std::string(14, ' ');
  for (const auto& b : s.blocks) {
    std::snprintf(buf, sizeof buf, " | %-40s", ("weights = " + weight_mode_name(b.mode)).c_str());
    os << buf;
  }
  os << "\n" << std::string(14, ' ');
  for (std::size_t i = 0; i < s.blocks.size(); ++i) {
    std::snprintf(buf, sizeof buf, " | %8s %8s %7s %7s %6s", "Mean", "Med", "SD", "SE", "Cov");
    os << buf;
  }
  os << "\n";
  const std::size_t rows = s.blocks.empty() ? 0 : s.blocks.front().estimands.size();
  for (std::size_t r = 0; r < rows; ++r) {
    std::snprintf(buf, sizeof buf, "%-14s", s.blocks.front().estimands[r].name.c_str());
    os << buf;
    for (const auto& b : s.blocks) {
      const auto& e = b.estimands[r];
      std::string sd = e.sd ? [&] {
        char t[32];
        std::snprintf(t, sizeof t, "%7.3f", *e.sd);
        return std::string(t);
      }()
                            : std::string("      -");
      std::snprintf(buf, sizeof buf, " | %8.3f %8.3f %s %7.3f %6.3f", e.mean, e.median, sd.c_str(), e.mean_se,
                    e.coverage);
      os << buf;
    }
    os << "\n";
  }
  for (const auto& b : s.blocks) {
    std::snprintf(buf, sizeof buf, "%s weights: %d ok, %d failed, waning test rejection %.3f", weight_mode_name(b.mode).c_str(),
                  b.successes, b.failures, b.rejection_rate);
    os << buf;
    if (b.type1_error) {
      std::snprintf(buf, sizeof buf, " (type I error %.3f)", *b.type1_error);
      os << buf;
    }
    os << "\n";
  }
  return os.str();
}

/// Replicate-level estimates, one row per (replication, weight mode).
inline std::string replicates_to_csv(const std::vector<ReplicateResult>& reps, const EstimandTargets& t) {
  using detail::format_double;
  std::ostringstream os;
  os << "replication,weights,ok,theta0";
  for (const auto& n : t.names) os << "," << n << "," << n << "_se," << n << "_covered";
  os << ",reject,failure\n";
  for (const auto& r : reps) {
    os << r.replication << "," << weight_mode_name(r.mode) << "," << (r.ok ? 1 : 0) << "," << format_double(r.theta0);
    for (int k = 0; k < 3; ++k) {
      os << "," << format_double(r.estimate[k]) << "," << format_double(r.se[k]) << "," << (r.covered[k] ? 1 : 0);
    }
    std::string f = r.failure;
    std::replace(f.begin(), f.end(), ',', ';');
    std::replace(f.begin(), f.end(), '\n', ' ');
    os << "," << (r.reject ? 1 : 0) << "," << f << "\n";
  }
  return os.str();
}

}  // namespace vewane
