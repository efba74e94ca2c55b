#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "vewane/error.hpp"
#include "vewane/logistic.hpp"
#include "vewane/record.hpp"
#include "vewane/rng.hpp"
#include "vewane/timeline.hpp"
#include "vewane/waning.hpp"

namespace vewane {

/// Generative model of a simulated trial. Covariates are X1 ~ Bernoulli(p_x1)
/// and X2 ~ N(mu_x2, sd_x2^2); coefficient arrays act on (1, X1 - p_x1, X2 - mu_x2).
struct ScenarioConfig {
  std::string name = "custom";
  std::size_t n = 30000;
  TrialTimeline timeline;
  WaningModelSpec waning = WaningModelSpec::piecewise({20.0});
  double theta0 = std::log(0.05);
  Vector theta1 = Vector::Constant(1, std::log(7.0));

  double p_x1 = 0.5;
  double mu_x2 = 45.0;
  double sd_x2 = 10.0;

  // Requested-unblinding hazard: intercept, (X1, X2) slopes for placebo,
  // then (X1, X2) slopes for vaccinees.
  std::array<double, 5> beta_request{std::log(0.036), 0.0, 0.0, 0.0, 0.0};
  // Agreement logit: intercept, X1, X2, and the coefficient on Gamma.
  std::array<double, 4> gamma_agree{1.4, 0.0, 0.0, -0.1};
  // Blinded infection log-rate: intercept, X1, X2.
  std::array<double, 3> delta_infect{std::log(0.0006), 0.4, 0.04};
  double frailty_var = 0.04;
  double lambda_u_multiplier = 1.25;      // lambda^u / lambda^b
  double lambda_lag_multiplier = 1.0;     // lambda^u_lag / lambda^b
  // When set, the fully protected unblinded rate is lambda_u_multiplier *
  // lambda^b * exp(theta0); otherwise lambda_u_multiplier * lambda^b.
  bool unblinded_rate_protected = true;
  bool patient_scale_comparison = false;  // compare T0* (not E + T0*) with the unblinding time
  std::uint64_t seed = 1;

  Theta theta_true() const { return {theta0, theta1}; }

  std::vector<std::string> violations() const {
    std::vector<std::string> out = timeline.violations();
    if (n < 1) out.emplace_back("n must be >= 1");
    if (!waning.is_piecewise()) out.emplace_back("simulation requires a piecewise-constant waning model");
    if (theta1.size() != waning.dim_theta1()) out.emplace_back("theta1 dimension does not match the waning model");
    if (!(p_x1 > 0.0 && p_x1 < 1.0)) out.emplace_back("p_x1 must lie in (0, 1)");
    if (!(sd_x2 >= 0.0)) out.emplace_back("sd_x2 must be >= 0");
    if (!(frailty_var >= 0.0)) out.emplace_back("frailty variance must be >= 0");
    if (!(lambda_u_multiplier > 0.0)) out.emplace_back("lambda_u multiplier must be > 0");
    if (!(lambda_lag_multiplier > 0.0)) out.emplace_back("lambda_u_lag multiplier must be > 0");
    auto finite = [](const auto& a) { return std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); }); };
    if (!finite(beta_request) || !finite(gamma_agree) || !finite(delta_infect) || !std::isfinite(theta0) ||
        !theta1.allFinite()) {
      out.emplace_back("coefficients must be finite");
    }
    return out;
  }

  void validate() const {
    auto v = violations();
    if (v.empty()) return;
    std::string msg = "invalid scenario:";
    for (auto& s : v) msg += " " + s + ";";
    throw InvalidArgument(msg);
  }
};

inline std::vector<std::string> scenario_preset_names() {
  return {"i-a", "i-b", "ii-a", "ii-b", "ii-a-strong", "ii-b-strong"};
}

/// Presets: (i) no confounding / (ii) confounding, (a) theta1 = log 7 /
/// (b) theta1 = 0, and the strong-confounding variants of (ii).
inline ScenarioConfig scenario_preset(const std::string& name) {
  ScenarioConfig c;
  c.name = name;
  const bool confounded = name.rfind("ii-", 0) == 0;
  if (!confounded && name.rfind("i-", 0) != 0) throw InvalidArgument("unknown scenario preset '" + name + "'");
  const std::string rest = name.substr(confounded ? 3 : 2);
  const bool strong = rest.size() > 1 && rest.substr(1) == "-strong";
  if ((rest != "a" && rest != "b" && !strong) || (strong && !confounded) || (strong && rest[0] != 'a' && rest[0] != 'b')) {
    throw InvalidArgument("unknown scenario preset '" + name + "'");
  }
  c.theta1(0) = rest[0] == 'a' ? std::log(7.0) : 0.0;
  if (confounded) {
    c.beta_request = {std::log(0.036), -0.8, -0.08, 0.8, 0.08};
    c.gamma_agree = {1.4, -0.8, -0.08, -0.1};
  }
  if (strong) {
    c.delta_infect = {std::log(0.0006), 0.7, 0.07};
    c.gamma_agree = {1.4, -1.0, -0.1, -0.1};
  }
  return c;
}

/// Constant hazard `rate` on [start, end); end may be +inf.
struct HazardSegment {
  double start;
  double end;
  double rate;
};

/// Solves Lambda(t) = target over contiguous segments; +inf when the total
/// hazard never reaches the target.
inline double invert_cumulative_hazard(const std::vector<HazardSegment>& segments, double target) {
  double cum = 0.0;
  for (std::size_t k = 0; k < segments.size(); ++k) {
    const auto& s = segments[k];
    if (!(s.rate >= 0.0) || !(s.end >= s.start)) throw InvalidArgument("hazard segments need rate >= 0 and end >= start");
    if (k > 0 && segments[k - 1].end != s.start) throw InvalidArgument("hazard segments must be contiguous");
    if (s.rate == 0.0) continue;
    const double mass = s.rate * (s.end - s.start);
    if (cum + mass >= target) return s.start + (target - cum) / s.rate;
    cum += mass;
  }
  return INFINITY;
}

/// Inverse transform: inf{t : Lambda(t) >= -log u} for u in (0, 1].
inline double invert_piecewise_hazard(const std::vector<HazardSegment>& segments, double u) {
  if (!(u > 0.0 && u <= 1.0)) throw InvalidArgument("inverse transform needs u in (0, 1]");
  return invert_cumulative_hazard(segments, -std::log(u));
}

/// Subject-level infection rates; lambda^u_lag and lambda^u are multiples of lambda^b.
struct InfectionRates {
  double blinded = 0.0;
  double lag = 0.0;
  double unblinded = 0.0;
};

inline InfectionRates infection_rates(const ScenarioConfig& cfg, double lambda_b) {
  double u = cfg.lambda_u_multiplier * lambda_b;
  if (cfg.unblinded_rate_protected) u *= std::exp(cfg.theta0);
  return {lambda_b, cfg.lambda_lag_multiplier * lambda_b, u};
}

/// Calendar-time hazard of potential infection under arm `arm` for a
/// participant entering at e and unblinded/crossed over at r (zeta = 0):
///   placebo  lambda^b before r, lambda^u_lag for lag weeks, then lambda^u e^{g(t-r-lag)}
///   vaccine  before r: lambda^b before e+lag, lambda^b e^{theta0 + g(t-e-lag)} after;
///            from r on: lambda^u e^{g(t-e-lag)}
inline double potential_hazard(const ScenarioConfig& cfg, int arm, double e, double r, double t,
                               double lambda_b) {
  if (!(t > e)) throw InvalidArgument("potential hazard is defined for t > e only");
  const InfectionRates lam = infection_rates(cfg, lambda_b);
  const double lag = cfg.timeline.lag;
  auto g = [&](double u) { return g_value(cfg.waning, cfg.theta1, u); };
  if (arm == 0) {
    if (t < r) return lam.blinded;
    if (t - r < lag) return lam.lag;
    return lam.unblinded * std::exp(g(t - r - lag));
  }
  if (t < r) {
    if (t - e < lag) return lam.blinded;
    return lam.blinded * std::exp(cfg.theta0 + g(t - e - lag));
  }
  return lam.unblinded * std::exp(g(t - e - lag));
}

/// Piecewise-constant calendar-time hazard segments from e onwards; the
/// hazard can only change at r, r + lag (+ knots), e + lag (+ knots).
inline std::vector<HazardSegment> potential_hazard_segments(const ScenarioConfig& cfg, int arm, double e, double r,
                                                            double lambda_b) {
  if (!cfg.waning.is_piecewise()) throw InvalidArgument("simulation requires a piecewise-constant waning model");
  const double lag = cfg.timeline.lag;
  std::vector<double> cuts{e, r, r + lag, e + lag};
  for (double v : cfg.waning.knots()) {
    cuts.push_back(r + lag + v);
    cuts.push_back(e + lag + v);
  }
  std::vector<double> pts;
  for (double c : cuts) {
    if (std::isfinite(c) && c >= e) pts.push_back(c);
  }
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  std::vector<HazardSegment> segs;
  for (std::size_t k = 0; k < pts.size(); ++k) {
    const double a = pts[k];
    const double b = k + 1 < pts.size() ? pts[k + 1] : INFINITY;
    const double mid = std::isfinite(b) ? 0.5 * (a + b) : a + 1.0;
    segs.push_back({a, b, potential_hazard(cfg, arm, e, r, mid, lambda_b)});
  }
  return segs;
}

/// Latent quantities behind one simulated record.
struct LatentParticipant {
  double x1 = 0.0, x2 = 0.0;
  double frailty = 0.0;
  double lambda_b = 0.0;
  double r1 = 0.0, r2 = 0.0;
  double r_tilde = 0.0;  // unblinding time if uninfected first
  int gamma_tilde = 0;
  int psi = 0;
  double t0_star = 0.0;  // potential infection times, patient scale, with r = r_tilde
  double t1_star = 0.0;
  double t_decline = 0.0;  // calendar infection time of a placebo decliner
};

struct SimulatedParticipant {
  ParticipantRecord record;
  LatentParticipant latent;
};

/// Draws one participant; the order of draws from `rng` is fixed.
template <class Rng>
SimulatedParticipant generate_participant_full(const ScenarioConfig& cfg, Rng& rng) {
  const TrialTimeline& tl = cfg.timeline;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto exp_draw = [&](double rate) { return -std::log1p(-unif(rng)) / rate; };

  SimulatedParticipant out;
  LatentParticipant& z = out.latent;
  ParticipantRecord& rec = out.record;

  rec.arm = unif(rng) < tl.p_assign ? 1 : 0;
  z.x1 = unif(rng) < cfg.p_x1 ? 1.0 : 0.0;
  z.x2 = cfg.mu_x2 + cfg.sd_x2 * normal(rng);
  rec.entry = tl.t_accrual * unif(rng);
  const double c1 = z.x1 - cfg.p_x1, c2 = z.x2 - cfg.mu_x2;

  const auto& b = cfg.beta_request;
  const double eta_r1 = b[0] + (rec.arm == 0 ? b[1] * c1 + b[2] * c2 : b[3] * c1 + b[4] * c2);
  z.r1 = tl.t_pfizer + exp_draw(std::exp(eta_r1));
  z.r2 = tl.t_pdcv_start + (tl.t_pdcv_end - tl.t_pdcv_start) * unif(rng);
  z.gamma_tilde = z.r1 >= tl.t_pdcv_start ? 2 : 1;
  z.r_tilde = z.gamma_tilde == 1 ? z.r1 : z.r2;

  const auto& g = cfg.gamma_agree;
  z.psi = unif(rng) < expit(g[0] + g[1] * c1 + g[2] * c2 + g[3] * z.gamma_tilde) ? 1 : 0;

  z.frailty = std::sqrt(cfg.frailty_var) * normal(rng);
  const auto& d = cfg.delta_infect;
  z.lambda_b = std::exp(d[0] + d[1] * c1 + d[2] * c2 + z.frailty);

  const double u0 = exp_draw(1.0), u1 = exp_draw(1.0);
  z.t0_star = invert_cumulative_hazard(potential_hazard_segments(cfg, 0, rec.entry, z.r_tilde, z.lambda_b), u0) -
              rec.entry;
  z.t1_star = invert_cumulative_hazard(potential_hazard_segments(cfg, 1, rec.entry, z.r_tilde, z.lambda_b), u1) -
              rec.entry;
  z.t_decline = z.r_tilde + exp_draw(z.lambda_b);

  double u;
  if (rec.arm == 1) {
    u = rec.entry + z.t1_star;
  } else {
    const bool before = cfg.patient_scale_comparison ? z.t0_star < z.r_tilde : rec.entry + z.t0_star < z.r_tilde;
    if (before || z.psi == 1) {
      u = rec.entry + z.t0_star;
    } else {
      u = cfg.patient_scale_comparison ? rec.entry + z.t_decline : z.t_decline;
    }
  }
  rec.infect_time = u;
  rec.infected = u <= tl.t_analysis ? 1 : 0;
  rec.r_time = u <= z.r_tilde ? u : z.r_tilde;
  rec.gamma = u > rec.r_time ? z.gamma_tilde : 0;
  rec.psi = z.psi;
  rec.psi_valid = true;
  rec.covariates = {z.x1, z.x2};
  return out;
}

template <class Rng>
ParticipantRecord generate_participant(const ScenarioConfig& cfg, Rng& rng) {
  return generate_participant_full(cfg, rng).record;
}

/// n iid participants; participant i draws from substream (seed, replication, i),
/// so the result does not depend on `threads`.
inline Dataset generate_dataset(const ScenarioConfig& cfg, std::size_t n, std::uint64_t seed,
                                std::uint64_t replication = 0, unsigned threads = 1) {
  cfg.validate();
  if (n < 1) throw InvalidArgument("generate_dataset: n must be >= 1");
  Dataset data;
  data.n_covariates = 2;
  data.records.resize(n);
  auto work = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      SplitMix64 rng = substream(seed, replication, i);
      data.records[i] = generate_participant(cfg, rng);
    }
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n)));
  if (threads == 1) {
    work(0, n);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t lo = t * chunk, hi = std::min(n, lo + chunk);
      if (lo < hi) pool.emplace_back(work, lo, hi);
    }
    for (auto& th : pool) th.join();
  }
  return data;
}

inline Dataset generate_dataset(const ScenarioConfig& cfg) { return generate_dataset(cfg, cfg.n, cfg.seed); }

}  // namespace vewane
