// ve-wane: simulate trials, estimate waning VE on one dataset, or run a
// Monte Carlo study. Results go to files and stdout, logs to stderr.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vewane/vewane.hpp"

namespace fs = std::filesystem;
using namespace vewane;

namespace {

bool g_quiet = false;
const auto g_start = std::chrono::steady_clock::now();

void log(const std::string& msg) {
  if (g_quiet) return;
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - g_start).count();
  char stamp[32];
  std::snprintf(stamp, sizeof stamp, "[%8.1fs] ", s);
  std::cerr << stamp << msg << std::endl;
}

struct RunConfig {
  std::optional<ScenarioConfig> scenario;
  std::optional<std::string> data_path;
  TrialTimeline timeline;  // data mode; a scenario carries its own
  AnalysisOptions analysis;
  bool waning_given = false;
  std::vector<WeightMode> weight_modes{WeightMode::Unit};
  int replications = 1;
  unsigned threads = 1;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  double max_failure_fraction = 0.05;

  std::uint64_t run_seed() const { return seed ? *seed : (scenario ? scenario->seed : 1); }
  const TrialTimeline& trial_timeline() const { return scenario ? scenario->timeline : timeline; }
};

std::vector<WeightMode> parse_weight_modes(const std::string& s) {
  if (s == "both") return {WeightMode::Unit, WeightMode::Estimated};
  return {parse_weight_mode(s)};
}

ScenarioConfig parse_scenario(const Json& j) {
  if (j.is_string()) return scenario_preset(j.get<std::string>());
  if (!j.is_object()) throw InvalidArgument("'scenario' must be a preset name or an object");
  ScenarioConfig base = j.contains("preset") ? scenario_preset(j.at("preset").get<std::string>()) : ScenarioConfig{};
  if (j.contains("preset") && !j.contains("name")) base.name = j.at("preset").get<std::string>();
  return scenario_from_json(j, base);
}

void parse_analysis(const Json& j, RunConfig& rc) {
  auto& a = rc.analysis;
  for (const auto& [k, v] : j.items()) {
    if (k == "waning") {
      a.spec = waning_from_json(v);
      rc.waning_given = true;
    } else if (k == "weights") {
      rc.weight_modes = parse_weight_modes(v.get<std::string>());
    } else if (k == "alpha") {
      a.alpha = v.get<double>();
    } else if (k == "taus") {
      a.taus = v.get<std::vector<double>>();
    } else if (k == "bootstrap_reps") {
      a.bootstrap_reps = v.get<int>();
    } else if (k == "bootstrap_seed") {
      a.bootstrap_seed = v.get<std::uint64_t>();
    } else if (k == "zero_nuisance_coefficients") {
      a.zero_nuisance_coefficients = v.get<bool>();
    } else if (k == "x_ref") {
      if (v.is_array()) {
        a.nuisance.x_ref = v.get<std::vector<double>>();
      } else if (v == "all") {
        a.nuisance.x_ref_mode = ReferenceCovariates::AllSubjects;
      } else if (v == "placebo") {
        a.nuisance.x_ref_mode = ReferenceCovariates::PlaceboSubjects;
      } else {
        throw InvalidArgument("x_ref must be 'all', 'placebo' or a covariate vector");
      }
    } else if (k == "solver") {
      for (const auto& [sk, sv] : v.items()) {
        if (sk == "tol") a.solver.tol = sv.get<double>();
        else if (sk == "max_iter") a.solver.max_iter = sv.get<int>();
        else if (sk == "grouped") a.solver.grouped = sv.get<bool>();
        else throw InvalidArgument("unknown solver key '" + sk + "'");
      }
    } else {
      throw InvalidArgument("unknown analysis key '" + k + "'");
    }
  }
  if (!(a.alpha > 0.0 && a.alpha < 1.0)) throw InvalidArgument("alpha must lie in (0, 1)");
  if (a.bootstrap_reps < 0) throw InvalidArgument("bootstrap_reps must be >= 0");
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open config file '" + path + "'");
  Json j;
  try {
    j = Json::parse(in, nullptr, true, true);
  } catch (const Json::parse_error& e) {
    throw InvalidArgument("config '" + path + "' is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw InvalidArgument("config must be a JSON object");
  RunConfig rc;
  const fs::path dir = fs::path(path).parent_path();
  for (const auto& [k, v] : j.items()) {
    if (k == "mode") continue;  // the subcommand decides
    if (k == "scenario") rc.scenario = parse_scenario(v);
    else if (k == "data") {
      fs::path p = v.get<std::string>();
      rc.data_path = (p.is_relative() ? dir / p : p).string();
    } else if (k == "timeline") rc.timeline = timeline_from_json(v);
    else if (k == "analysis") parse_analysis(v, rc);
    else if (k == "replications") rc.replications = v.get<int>();
    else if (k == "threads") rc.threads = v.get<unsigned>();
    else if (k == "seed") rc.seed = v.get<std::uint64_t>();
    else if (k == "out") rc.out = v.get<std::string>();
    else if (k == "max_failure_fraction") rc.max_failure_fraction = v.get<double>();
    else throw InvalidArgument("unknown config key '" + k + "'");
  }
  return rc;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  if (!out) throw Error("cannot write '" + p.string() + "'");
  out << text;
  if (!out) throw Error("write to '" + p.string() + "' failed");
  log("wrote " + p.string());
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string result_to_text(const AnalysisOutput& a, WeightMode mode) {
  const auto& r = a.result;
  std::ostringstream os;
  os << "weights: " << weight_mode_name(mode) << "   jumps: blinded " << r.n_jumps_b << ", unblinded " << r.n_jumps_u
     << "   iterations: " << r.iterations << "\n\n";
  os << "coefficient        estimate        se\n";
  const Vector th = r.theta_hat.as_vector();
  const Vector se = r.se();
  for (int k = 0; k < th.size(); ++k) {
    std::string name = theta_coordinate_name(r.spec, k);
    name.resize(std::max<std::size_t>(name.size(), 16), ' ');
    os << name << fmt("%12.4f", th(k)) << fmt("%10.4f", se(k)) << "\n";
  }
  os << "\n    tau        VE        se     lower     upper\n";
  for (const auto& v : r.ve_estimates) {
    os << fmt("%7.2f", v.tau) << fmt("%10.4f", v.point) << fmt("%10.4f", v.se) << fmt("%10.4f", v.lower)
       << fmt("%10.4f", v.upper) << "\n";
  }
  const auto& w = r.wald_waning;
  os << "\nwaning test (H0: " << theta_coordinate_name(r.spec, w.coordinate) << " <= 0): z = " << fmt("%.3f", w.statistic)
     << ", p = " << fmt("%.4g", w.p_value) << (w.reject ? ", reject" : ", do not reject") << " at alpha "
     << fmt("%g", w.alpha) << "\n";
  const auto& d = a.diagnostics;
  os << "effective sample size: blinded " << fmt("%.1f", d.ess_blinded) << " of " << d.n_blinded << ", unblinded "
     << fmt("%.1f", d.ess_unblinded) << " of " << d.n_unblinded << "; weight range [" << fmt("%.4f", d.min_weight)
     << ", " << fmt("%.4f", d.max_weight) << "]\n";
  if (a.bootstrap_failures) os << "bootstrap failures: " << a.bootstrap_failures << "\n";
  return os.str();
}

std::string diagnostics_to_csv(const WeightDiagnostics& d) {
  using detail::format_double;
  std::ostringstream os;
  os << "metric,process,index,value\n";
  os << "ess,blinded,," << format_double(d.ess_blinded) << "\n";
  os << "ess,unblinded,," << format_double(d.ess_unblinded) << "\n";
  os << "count,blinded,," << d.n_blinded << "\n";
  os << "count,unblinded,," << d.n_unblinded << "\n";
  os << "min,,," << format_double(d.min_weight) << "\n";
  os << "max,,," << format_double(d.max_weight) << "\n";
  for (const auto& w : d.largest) os << "largest," << w.process << "," << w.index << "," << format_double(w.weight) << "\n";
  return os.str();
}

void prepare_out(const RunConfig& rc) {
  std::error_code ec;
  fs::create_directories(rc.out, ec);
  if (ec) throw Error("cannot create output directory '" + rc.out + "': " + ec.message());
}

void require_scenario(const RunConfig& rc, const char* cmd) {
  if (!rc.scenario) throw InvalidArgument(std::string(cmd) + " needs a scenario (config 'scenario' or --preset)");
}

int run_simulate(const RunConfig& rc) {
  require_scenario(rc, "simulate");
  const auto& sc = *rc.scenario;
  sc.validate();
  prepare_out(rc);
  log("simulating scenario " + sc.name + ", n = " + std::to_string(sc.n) + ", seed " + std::to_string(rc.run_seed()));
  const Dataset data = generate_dataset(sc, sc.n, rc.run_seed(), 0, rc.threads);
  write_dataset_csv((fs::path(rc.out) / "data.csv").string(), data);
  log("wrote " + (fs::path(rc.out) / "data.csv").string());
  Json sj = to_json(sc);
  sj["seed"] = rc.run_seed();
  write_file(fs::path(rc.out) / "scenario.json", sj.dump(2) + "\n");
  return 0;
}

int run_estimate(const RunConfig& rc) {
  if (rc.weight_modes.size() != 1) throw InvalidArgument("estimate takes one weight mode, 'unit' or 'estimated'");
  AnalysisOptions opt = rc.analysis;
  opt.weights = rc.weight_modes.front();
  Dataset data;
  if (rc.data_path) {
    log("reading " + *rc.data_path);
    data = read_dataset_csv(*rc.data_path);
  } else {
    const auto& sc = *rc.scenario;
    sc.validate();
    if (!rc.waning_given) opt.spec = sc.waning;
    log("simulating scenario " + sc.name + ", n = " + std::to_string(sc.n) + ", seed " + std::to_string(rc.run_seed()));
    data = generate_dataset(sc, sc.n, rc.run_seed(), 0, rc.threads);
  }
  const TrialTimeline& tl = rc.trial_timeline();
  prepare_out(rc);
  log("estimating with " + weight_mode_name(opt.weights) + " weights on " + std::to_string(data.size()) + " records");
  const AnalysisOutput out = estimate_dataset(data, tl, opt);
  write_file(fs::path(rc.out) / "result.json", to_json(out, opt.weights).dump(2) + "\n");
  write_file(fs::path(rc.out) / "weights_diag.csv", diagnostics_to_csv(out.diagnostics));
  const std::string text = result_to_text(out, opt.weights);
  write_file(fs::path(rc.out) / "result.txt", text);
  std::cout << text;
  return 0;
}

int run_mc_study_cmd(const RunConfig& rc) {
  require_scenario(rc, "mc-study");
  McStudyConfig cfg;
  cfg.scenario = *rc.scenario;
  cfg.weight_modes = rc.weight_modes;
  cfg.replications = rc.replications;
  cfg.threads = rc.threads;
  cfg.seed = rc.run_seed();
  cfg.analysis = rc.analysis;
  cfg.max_failure_fraction = rc.max_failure_fraction;
  if (rc.waning_given) cfg.scenario.waning = rc.analysis.spec;
  const int step = std::max(1, rc.replications / 20);
  cfg.progress = [step](int done, int total) {
    if (done % step == 0 || done == total) log("replications " + std::to_string(done) + "/" + std::to_string(total));
  };
  prepare_out(rc);
  log("mc-study " + cfg.scenario.name + ": " + std::to_string(cfg.replications) + " replications of n = " +
      std::to_string(cfg.scenario.n) + " on " + std::to_string(cfg.threads) + " threads, seed " +
      std::to_string(cfg.seed));
  const McStudyOutput out = run_mc_study(cfg);
  for (const auto& r : out.replicates) {
    if (!r.ok) log("replication " + std::to_string(r.replication) + " (" + weight_mode_name(r.mode) + ") failed: " + r.failure);
  }
  const auto& s = out.summary;
  write_file(fs::path(rc.out) / "summary.csv", summary_to_csv(s));
  write_file(fs::path(rc.out) / "summary.json", to_json(s).dump(2) + "\n");
  write_file(fs::path(rc.out) / "replicates.csv", replicates_to_csv(out.replicates, estimand_targets(cfg.scenario)));
  const std::string text = summary_to_text(s);
  write_file(fs::path(rc.out) / "summary.txt", text);
  std::cout << text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Waning vaccine efficacy from blinded and unblinded trial follow-up"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", "ve-wane 1.0");

  std::string config, preset, data, weights, out;
  std::optional<std::uint64_t> seed;
  std::optional<int> reps;
  std::optional<unsigned> threads;
  std::optional<std::size_t> n;
  app.add_flag("-q,--quiet", g_quiet, "Suppress log output on stderr");

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--preset", preset, "Scenario preset (i-a, i-b, ii-a, ii-b, ii-a-strong, ii-b-strong)");
    sub->add_option("--seed", seed, "Random seed");
    sub->add_option("--weights", weights, "Weight mode: unit | estimated (mc-study also accepts both)");
    sub->add_option("-o,--out", out, "Output directory");
    sub->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_option("-n,--subjects", n, "Participants per simulated trial")->check(CLI::PositiveNumber);
  };
  auto* sim = app.add_subcommand("simulate", "Simulate one trial dataset and write data.csv");
  auto* est = app.add_subcommand("estimate", "Estimate waning VE on one dataset");
  auto* mc = app.add_subcommand("mc-study", "Run a Monte Carlo study and write summary tables");
  for (auto* sub : {sim, est, mc}) add_common(sub);
  est->add_option("--data", data, "Participant CSV to analyse")->check(CLI::ExistingFile);
  mc->add_option("--reps", reps, "Monte Carlo replications")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig rc = config.empty() ? RunConfig{} : load_config(config);
    if (!preset.empty()) {
      if (rc.scenario) throw InvalidArgument("--preset conflicts with the scenario in the config file");
      rc.scenario = scenario_preset(preset);
    }
    if (!data.empty()) {
      rc.data_path = data;
      rc.scenario.reset();
    }
    if (rc.scenario && rc.data_path) throw InvalidArgument("set either a scenario or a data path, not both");
    if (!rc.scenario && !rc.data_path) throw InvalidArgument("no scenario or data given (use --config, --preset or --data)");
    if (seed) rc.seed = *seed;
    if (reps) rc.replications = *reps;
    if (threads) rc.threads = *threads;
    if (!out.empty()) rc.out = out;
    if (!weights.empty()) rc.weight_modes = parse_weight_modes(weights);
    if (n) {
      if (!rc.scenario) throw InvalidArgument("--subjects applies to simulated data only");
      rc.scenario->n = *n;
    }
    if (rc.replications < 1) throw InvalidArgument("replications must be >= 1");
    if (rc.threads < 1) rc.threads = 1;

    if (sim->parsed()) {
      if (rc.data_path) throw InvalidArgument("simulate needs a scenario, not a data path");
      return run_simulate(rc);
    }
    if (est->parsed()) return run_estimate(rc);
    return run_mc_study_cmd(rc);
  } catch (const vewane::Error& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: config: " << e.what() << std::endl;
    return 1;
  }
}
