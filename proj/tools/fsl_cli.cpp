// fsl_cli: generate synthetic data, train the scenario grid, evaluate saved
// models and print privacy budget tables.
//
// Exit codes: 0 success, 1 config error, 2 runtime failure.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "fsl/errors.hpp"
#include "fsl/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw fsl::ConfigError("cannot open " + path);
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw fsl::ConfigError(path + ": " + e.what());
  }
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw fsl::Error("cannot write " + path.string());
  out << text;
}

int workers_from_env() {
  const char* w = std::getenv("FSL_WORKERS");
  if (w == nullptr || *w == '\0') return 1;
  char* end = nullptr;
  const long v = std::strtol(w, &end, 10);
  if (*end != '\0' || v < 1) throw fsl::ConfigError("FSL_WORKERS must be a positive integer");
  return static_cast<int>(v);
}

// --- generate --------------------------------------------------------------

void cmd_generate(const std::string& spec_path, const std::string& out_dir) {
  json j = read_json(spec_path);
  if (j.contains("synthetic")) j = j.at("synthetic");
  const fsl::SyntheticSpec spec = fsl::SyntheticSpec::from_json(j);
  const fsl::SyntheticDataset ds = fsl::generate_synthetic(spec);
  fs::create_directories(out_dir);
  fsl::write_csv(ds.table, (fs::path(out_dir) / "data.csv").string());
  write_file(fs::path(out_dir) / "schema.json", ds.table.schema.to_json().dump(2) + "\n");
  json truth = ds.truth.to_json();
  truth["spec"] = spec.to_json();
  write_file(fs::path(out_dir) / "ground_truth.json", truth.dump(2) + "\n");
  std::cout << "wrote " << ds.table.rows.size() << " rows to " << out_dir << "\n";
}

// --- train -----------------------------------------------------------------

fsl::ExperimentConfig load_config(const std::string& path, const std::string& out,
                                  const std::optional<std::uint64_t>& seed,
                                  const std::vector<std::string>& scenarios) {
  fsl::ExperimentConfig config = fsl::ExperimentConfig::load(path);
  if (!out.empty()) config.output_dir = out;
  if (seed) config.seeds = {*seed};
  if (!scenarios.empty()) {
    config.scenarios.clear();
    for (const auto& s : scenarios) config.scenarios.push_back(fsl::Scenario::parse(s));
  }
  config.validate();
  return config;
}

void cmd_train(const fsl::ExperimentConfig& config) {
  const auto rows = fsl::run_experiment(config, workers_from_env());
  std::printf("%-22s %6s %17s %17s %17s %17s\n", "scenario", "seeds", "test CI", "test IBS",
              "OOT CI", "OOT IBS");
  for (const auto& r : rows) {
    std::printf("%-22s %6zu %8.4f±%-8.4f %8.4f±%-8.4f %8.4f±%-8.4f %8.4f±%-8.4f\n",
                r.scenario.c_str(), r.seeds, r.test_ci_mean, r.test_ci_std, r.test_ibs_mean,
                r.test_ibs_std, r.oot_ci_mean, r.oot_ci_std, r.oot_ibs_mean, r.oot_ibs_std);
  }
  std::cout << "results in " << (fs::path(config.output_dir) / config.name).string() << "\n";
}

// --- evaluate --------------------------------------------------------------

json evaluate_model(const fsl::ExperimentConfig& config, const fsl::PreparedData& data,
                    const fsl::HazardModel& model, const fs::path& out_dir) {
  json j;
  j["test"] = fsl::metric_report_to_json(fsl::evaluate_records(model, data, data.pooled_test()));
  const auto oot = data.pooled_oot();
  j["oot"] = oot.empty() ? json(nullptr)
                         : fsl::metric_report_to_json(fsl::evaluate_records(model, data, oot));
  for (bool is_oot : {false, true}) {
    json clients = json::array();
    for (const auto& c : fsl::evaluate_clients(model, data, is_oot)) {
      clients.push_back({{"name", c.name},
                         {"n", c.n},
                         {"c_index", c.c_index ? json(*c.c_index) : json(nullptr)},
                         {"ibs", std::isnan(c.ibs) ? json(nullptr) : json(c.ibs)}});
    }
    j[is_oot ? "clients_oot" : "clients_test"] = clients;
  }
  const auto test = data.pooled_test();
  if (!test.empty()) {
    std::vector<double> times;
    std::vector<int> events;
    Eigen::MatrixXd x(static_cast<Eigen::Index>(test.size()), data.feature_width());
    for (std::size_t i = 0; i < test.size(); ++i) {
      times.push_back(test[i].t);
      events.push_back(test[i].delta);
      x.row(static_cast<Eigen::Index>(i)) = test[i].x.transpose();
    }
    const auto pred = fsl::predict_survival(model, x, data.grid);
    std::vector<double> points;
    for (int l = 1; l <= data.grid.intervals(); ++l) points.push_back(data.grid.tau(l));
    std::string cal = "time,km,km_lo,km_hi,model_mean\n";
    for (const auto& p : fsl::calibration_curve(pred, times, events, points)) {
      cal += fmt(p.time) + "," + fmt(p.km) + "," + fmt(p.km_lo) + "," + fmt(p.km_hi) + "," +
             fmt(p.model_mean) + "\n";
    }
    write_file(out_dir / "calibration.csv", cal);
  }
  (void)config;
  return j;
}

// Per client, fraction of seeds where the Bayesian model beats the classical
// one on test C-index, for each training mode present in the run directory.
std::string win_rates(const fsl::ExperimentConfig& config, const fs::path& run_dir) {
  std::string out = "mode,client,seeds,bayesian_wins,win_rate,mean_ci_bayesian,mean_ci_classical\n";
  for (const std::string mode : {"centralized", "federated"}) {
    struct Tally {
      int seeds = 0, wins = 0;
      double bdp = 0.0, cls = 0.0;
    };
    std::map<std::string, Tally> tally;
    for (std::uint64_t seed : config.seeds) {
      const std::string sd = "seed_" + std::to_string(seed);
      const fs::path b = run_dir / (mode + "_bayesian") / sd / "model.json";
      const fs::path c = run_dir / (mode + "_classical") / sd / "model.json";
      if (!fs::exists(b) || !fs::exists(c)) continue;
      const fsl::PreparedData data = fsl::prepare_data(config, seed);
      const auto mb = fsl::evaluate_clients(fsl::model_from_json(read_json(b.string())), data, false);
      const auto mc = fsl::evaluate_clients(fsl::model_from_json(read_json(c.string())), data, false);
      for (std::size_t k = 0; k < mb.size(); ++k) {
        if (!mb[k].c_index || !mc[k].c_index) continue;
        Tally& t = tally[mb[k].name];
        ++t.seeds;
        if (*mb[k].c_index > *mc[k].c_index) ++t.wins;
        t.bdp += *mb[k].c_index;
        t.cls += *mc[k].c_index;
      }
    }
    for (const auto& [name, t] : tally) {
      out += mode + "," + name + "," + std::to_string(t.seeds) + "," + std::to_string(t.wins) +
             "," + fmt(static_cast<double>(t.wins) / t.seeds) + "," + fmt(t.bdp / t.seeds) + "," +
             fmt(t.cls / t.seeds) + "\n";
    }
  }
  return out;
}

void cmd_evaluate(const fsl::ExperimentConfig& config, const std::string& model_path,
                  const std::string& run_dir, std::optional<std::uint64_t> seed,
                  const std::string& out_dir) {
  if (model_path.empty() && run_dir.empty()) {
    throw fsl::ConfigError("evaluate needs --model or --run");
  }
  const fs::path out = out_dir.empty() ? fs::path(".") : fs::path(out_dir);
  fs::create_directories(out);
  if (!model_path.empty()) {
    const json mj = read_json(model_path);
    const fsl::HazardModel model = fsl::model_from_json(mj);
    if (!seed) {
      if (!mj.contains("seed")) throw fsl::ConfigError("model file has no seed; pass --seed");
      seed = mj.at("seed").get<std::uint64_t>();
    }
    const fsl::PreparedData data = fsl::prepare_data(config, *seed);
    json report = evaluate_model(config, data, model, out);
    report["seed"] = *seed;
    report["model"] = model_path;
    write_file(out / "evaluation.json", report.dump(2) + "\n");
    std::cout << "test mean C-index " << report["test"]["mean_c_index"].dump() << ", IBS "
              << report["test"]["ibs"].dump() << "\n";
    if (report["oot"].is_null()) std::cout << "OOT split absent\n";
  }
  if (!run_dir.empty()) {
    const std::string table = win_rates(config, run_dir);
    write_file(out / "win_rates.csv", table);
    std::cout << table;
  }
}

// --- accountant ------------------------------------------------------------

struct AccountantArgs {
  double q = 0.01;
  double sigma = 1.0;
  long steps = 1000;
  double delta = 1e-5;
  double beta = 5e-6;
  double gamma = 5e-6;
  std::vector<double> profile{0.0};  // squared sensitivities in noise units, per MC sample
  std::string profile_file;
  std::vector<int> rdp_orders = fsl::default_rdp_orders();
  std::vector<int> bdp_orders = fsl::default_bdp_orders();
  std::vector<double> targets{0.5, 1.0, 2.0, 10.0};
};

void cmd_accountant(AccountantArgs a) {
  if (!(a.q > 0.0 && a.q <= 1.0)) throw fsl::ConfigError("--q must lie in (0,1]");
  if (!(a.sigma > 0.0)) throw fsl::ConfigError("--sigma must be positive");
  if (a.steps < 1) throw fsl::ConfigError("--steps must be >= 1");
  if (!(a.delta > 0.0 && a.delta < 1.0)) throw fsl::ConfigError("--delta must lie in (0,1)");
  if (!a.profile_file.empty()) {
    std::ifstream in(a.profile_file);
    if (!in) throw fsl::ConfigError("cannot open " + a.profile_file);
    a.profile.clear();
    double v = 0.0;
    while (in >> v) a.profile.push_back(v);
    if (a.profile.empty()) throw fsl::ConfigError("--profile-file holds no values");
  }
  for (double v : a.profile) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw fsl::ConfigError("profile values must be >= 0");
  }

  const std::string params = fmt(a.q) + "," + fmt(a.sigma) + "," + std::to_string(a.steps);
  std::cout << "kind,q,sigma,steps,order,cost,epsilon,delta,target\n";

  fsl::RdpLedger rdp(a.rdp_orders);
  rdp.add_steps(a.q, a.sigma, a.steps);
  for (std::size_t k = 0; k < rdp.orders().size(); ++k) {
    std::cout << "rdp_order," << params << "," << rdp.orders()[k] << "," << fmt(rdp.costs()[k])
              << ",,,\n";
  }
  const fsl::PrivacySpend cls = fsl::rdp_to_dp(rdp, a.delta);
  std::cout << "classical," << params << "," << cls.order << ",," << fmt(cls.epsilon) << ","
            << fmt(cls.delta) << ",\n";

  fsl::BdpLedger bdp(a.bdp_orders);
  std::vector<double> step(a.bdp_orders.size());
  for (std::size_t k = 0; k < a.bdp_orders.size(); ++k) {
    step[k] = fsl::bdp_step_cost(a.profile, a.bdp_orders[k], a.q, a.sigma, a.gamma);
  }
  for (long s = 0; s < a.steps; ++s) bdp.add(step);
  for (std::size_t k = 0; k < bdp.orders().size(); ++k) {
    std::cout << "bdp_order," << params << "," << bdp.orders()[k] << "," << fmt(bdp.costs()[k])
              << ",,,\n";
  }
  const fsl::PrivacySpend bay = fsl::bdp_finalize(bdp, a.beta, a.gamma);
  std::cout << "bayesian," << params << "," << bay.order << ",," << fmt(bay.epsilon) << ","
            << fmt(bay.delta) << ",\n";

  for (double target : a.targets) {
    try {
      const double s = fsl::calibrate_sigma(target, a.delta, a.q, a.steps, a.rdp_orders);
      fsl::RdpLedger check(a.rdp_orders);
      check.add_steps(a.q, s, a.steps);
      const fsl::PrivacySpend got = fsl::rdp_to_dp(check, a.delta);
      std::cout << "calibration," << fmt(a.q) << "," << fmt(s) << "," << a.steps << ","
                << got.order << ",," << fmt(got.epsilon) << "," << fmt(a.delta) << ","
                << fmt(target) << "\n";
    } catch (const fsl::CalibrationFailure& e) {
      std::cout << "calibration," << fmt(a.q) << ",," << a.steps << ",,,,," << fmt(target)
                << "\n";
      std::cerr << "calibration for epsilon " << target << " failed: " << e.what() << "\n";
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated discrete-time survival with classical and Bayesian DP"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset and its ground truth");
  std::string gen_config, gen_out = "data";
  gen->add_option("--config", gen_config, "Synthetic spec (JSON)")->required();
  gen->add_option("--out", gen_out, "Output directory");

  auto* train = app.add_subcommand("train", "Train the configured scenarios over all seeds");
  std::string train_config, train_out;
  std::optional<std::uint64_t> train_seed;
  std::vector<std::string> train_scenarios;
  train->add_option("--config", train_config, "Experiment config (JSON)")->required();
  train->add_option("--out", train_out, "Override output directory");
  train->add_option("--seed-override", train_seed, "Run a single seed");
  train->add_option("--scenario", train_scenarios,
                    "Restrict to scenarios, e.g. federated_bayesian (repeatable)");

  auto* eval = app.add_subcommand("evaluate", "Evaluate a saved model, or win rates of a run");
  std::string eval_config, eval_model, eval_run, eval_out;
  std::optional<std::uint64_t> eval_seed;
  eval->add_option("--config", eval_config, "Experiment config used for training")->required();
  eval->add_option("--model", eval_model, "model.json from a run directory");
  eval->add_option("--run", eval_run, "Run directory; emits per-client BDP vs classical win rates");
  eval->add_option("--seed-override", eval_seed, "Seed whose split to evaluate on");
  eval->add_option("--out", eval_out, "Output directory");

  auto* acct = app.add_subcommand("accountant", "Classical and Bayesian budget table as CSV");
  AccountantArgs a;
  acct->add_option("--q", a.q, "Sampling rate")->capture_default_str();
  acct->add_option("--sigma", a.sigma, "Noise multiplier")->capture_default_str();
  acct->add_option("--steps", a.steps, "Number of steps")->capture_default_str();
  acct->add_option("--delta", a.delta, "Classical delta")->capture_default_str();
  acct->add_option("--beta", a.beta, "Bayesian beta")->capture_default_str();
  acct->add_option("--gamma", a.gamma, "Bayesian gamma")->capture_default_str();
  acct->add_option("--profile", a.profile,
                   "Per-sample squared sensitivities in noise units (same every step)");
  acct->add_option("--profile-file", a.profile_file, "Profile values, whitespace separated");
  acct->add_option("--rdp-orders", a.rdp_orders, "Renyi orders for classical accounting");
  acct->add_option("--bdp-orders", a.bdp_orders, "Orders for Bayesian accounting");
  acct->add_option("--targets", a.targets, "Target epsilons to calibrate sigma for");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*gen) {
      cmd_generate(gen_config, gen_out);
    } else if (*train) {
      cmd_train(load_config(train_config, train_out, train_seed, train_scenarios));
    } else if (*eval) {
      cmd_evaluate(load_config(eval_config, "", std::nullopt, {}), eval_model, eval_run,
                   eval_seed, eval_out);
    } else if (*acct) {
      cmd_accountant(a);
    }
  } catch (const fsl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
