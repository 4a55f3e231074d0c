#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "fsl/errors.hpp"
#include "fsl/experiment.hpp"

namespace fsl {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

RawTable load_table(const ExperimentConfig& config) {
  if (const auto* s = std::get_if<SyntheticSpec>(&config.dataset)) {
    return generate_synthetic(*s).table;
  }
  const auto& csv = std::get<CsvSource>(config.dataset);
  return load_csv(csv.path, csv.schema);
}

std::vector<SurvivalRecord> concat(const std::vector<ClientSplit>& clients,
                                   std::vector<SurvivalRecord> ClientSplit::*part) {
  std::vector<SurvivalRecord> out;
  for (const auto& c : clients) {
    out.insert(out.end(), (c.*part).begin(), (c.*part).end());
  }
  return out;
}

void times_events(const std::vector<SurvivalRecord>& records, std::vector<double>& times,
                  std::vector<int>& events) {
  times.clear();
  events.clear();
  for (const auto& r : records) {
    times.push_back(r.t);
    events.push_back(r.delta);
  }
}

Eigen::MatrixXd design(const std::vector<SurvivalRecord>& records, int width) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(records.size()), width);
  for (std::size_t i = 0; i < records.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) = records[i].x.transpose();
  }
  return x;
}

long total_steps(const FederationConfig& f, std::size_t n) {
  const long b = f.batch_size;
  const long batches = (static_cast<long>(n) + b - 1) / b;
  return static_cast<long>(f.rounds) * f.local_epochs * batches;
}

double sample_std(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? std::nan("") : s / static_cast<double>(v.size());
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json spend_json(const PrivacySpend& s) {
  return {{"epsilon", s.epsilon}, {"delta", s.delta}, {"regime", to_string(s.regime)},
          {"order", s.order}};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

void write_run(const fs::path& dir, const ScenarioRun& run, const PreparedData& data) {
  fs::create_directories(dir);

  std::string rounds;
  std::string loss = "round,client_id,train_loss\n";
  for (const auto& r : run.result.rounds) {
    json j;
    j["round"] = r.round;
    j["participants"] = r.participants;
    j["train_loss"] = r.train_loss;
    j["weights"] = r.weights;
    json spends = json::array();
    for (std::size_t k = 0; k < r.participants.size(); ++k) {
      spends.push_back({{"round", spend_json(r.round_spend[k])},
                        {"cumulative", spend_json(r.cumulative_spend[k])},
                        {"epsilon_linear", r.epsilon_linear[k]},
                        {"delta_linear", r.delta_linear[k]}});
      loss += std::to_string(r.round) + "," + std::to_string(r.participants[k]) + "," +
              fmt(r.train_loss[k]) + "\n";
    }
    j["privacy"] = spends;
    char hex[24];
    std::snprintf(hex, sizeof hex, "%016" PRIx64, r.checksum);
    j["checksum"] = hex;
    rounds += j.dump() + "\n";
  }
  write_text(dir / "rounds.jsonl", rounds);
  write_text(dir / "loss_curve.csv", loss);

  std::string ledger =
      "client_id,name,accounting,fallback,steps,order,order_cost,epsilon,delta,epsilon_linear,"
      "delta_linear,max_sensitivity\n";
  for (const auto& p : run.result.privacy) {
    const std::string head = std::to_string(p.client_id) + "," + p.name + "," +
                             to_string(p.accounting) + "," + (p.fallback ? "1" : "0") + "," +
                             std::to_string(p.steps) + ",";
    const std::string tail = "," + fmt(p.composed.epsilon) + "," + fmt(p.composed.delta) + "," +
                             fmt(p.epsilon_linear) + "," + fmt(p.delta_linear) + "," +
                             fmt(p.max_sensitivity) + "\n";
    if (p.orders.empty()) ledger += head + ",," + tail.substr(1);
    for (std::size_t k = 0; k < p.orders.size(); ++k) {
      ledger += head + std::to_string(p.orders[k]) + "," + fmt(p.order_costs[k]) + tail;
    }
  }
  write_text(dir / "ledger.csv", ledger);

  json metrics;
  metrics["scenario"] = run.scenario.name();
  metrics["seed"] = run.seed;
  metrics["sigma"] = run.sigma;
  metrics["epsilon"] = run.epsilon;
  metrics["epsilon_linear"] = run.epsilon_linear;
  metrics["test"] = metric_report_to_json(run.test);
  metrics["oot"] = run.oot ? metric_report_to_json(*run.oot) : json(nullptr);
  json clients = json::array();
  for (const auto& c : run.client_test) {
    clients.push_back(
        {{"name", c.name}, {"n", c.n}, {"c_index", optional_json(c.c_index)}, {"ibs", c.ibs}});
  }
  metrics["clients_test"] = clients;
  write_text(dir / "metrics.json", metrics.dump(2) + "\n");

  json model = model_to_json(run.result.model);
  model["scenario"] = run.scenario.name();
  model["seed"] = run.seed;
  model["time_grid"] = data.grid.boundaries();
  model["features"] = data.feature_names;
  model["preprocessing"] = data.preprocessing;
  write_text(dir / "model.json", model.dump() + "\n");

  std::string cal = "time,km,km_lo,km_hi,model_mean\n";
  for (const auto& p : run.calibration) {
    cal += fmt(p.time) + "," + fmt(p.km) + "," + fmt(p.km_lo) + "," + fmt(p.km_hi) + "," +
           fmt(p.model_mean) + "\n";
  }
  write_text(dir / "calibration.csv", cal);
}

void write_client_bars(const std::vector<ScenarioRun>& runs, const fs::path& path) {
  // scenario -> client -> CI per seed
  std::map<std::string, std::map<std::string, std::vector<double>>> ci;
  std::vector<std::string> order;
  for (const auto& r : runs) {
    const std::string s = r.scenario.name();
    if (std::find(order.begin(), order.end(), s) == order.end()) order.push_back(s);
    for (const auto& c : r.client_test) {
      if (c.c_index) ci[s][c.name].push_back(*c.c_index);
    }
  }
  std::string out = "scenario,client,seeds,c_index_mean,c_index_std\n";
  for (const auto& s : order) {
    for (const auto& [client, v] : ci[s]) {
      const double m = mean_of(v);
      out += s + "," + client + "," + std::to_string(v.size()) + "," + fmt(m) + "," +
             fmt(sample_std(v, m)) + "\n";
    }
  }
  write_text(path, out);
}

}  // namespace

std::vector<SurvivalRecord> PreparedData::pooled_train() const {
  return concat(clients, &ClientSplit::train);
}
std::vector<SurvivalRecord> PreparedData::pooled_test() const {
  return concat(clients, &ClientSplit::test);
}
std::vector<SurvivalRecord> PreparedData::pooled_oot() const {
  return concat(clients, &ClientSplit::oot);
}

PreparedData prepare_data(const ExperimentConfig& config, std::uint64_t seed) {
  const RawTable table = load_table(config);
  if (table.rows.empty()) throw InvalidInput("dataset has no rows");
  const std::size_t n = table.rows.size();

  std::vector<std::string> regions(n);
  std::vector<int> events(n);
  std::vector<std::optional<double>> origination(n);
  for (std::size_t i = 0; i < n; ++i) {
    regions[i] = table.rows[i].region;
    events[i] = table.rows[i].event;
    origination[i] = table.rows[i].origination;
  }
  const auto groups = partition_by_region(regions, events, config.partition);

  SplitSpec spec = config.split;
  spec.seed = seed;
  if (config.oot_cutoff_date) {
    spec.oot_cutoff = days_from_reference(*config.oot_cutoff_date, table.schema.reference_date);
  }
  std::vector<SplitIndices> splits;
  std::vector<std::size_t> train_rows;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    splits.push_back(split(groups[g].indices, origination, spec, g));
    train_rows.insert(train_rows.end(), splits.back().train.begin(), splits.back().train.end());
  }

  const FeatureEncoder encoder = FeatureEncoder::fit(table.schema, table.rows, train_rows);
  std::vector<SurvivalRecord> records(n);
  for (std::size_t i = 0; i < n; ++i) {
    records[i].x = encoder.encode(table.rows[i]);
    records[i].t = table.rows[i].time;
    records[i].delta = table.rows[i].event;
    validate(records[i]);
  }
  std::vector<const SurvivalRecord*> train_ptrs;
  for (std::size_t i : train_rows) train_ptrs.push_back(&records[i]);
  std::vector<SurvivalRecord*> all_ptrs;
  for (auto& r : records) all_ptrs.push_back(&r);
  const Scaler scaler = standardize(train_ptrs, all_ptrs);

  PreparedData data;
  data.grid = TimeGrid::uniform(config.intervals, config.interval_width);
  data.feature_names = encoder.feature_names();
  data.preprocessing = {{"encoder", encoder.to_json()}, {"scaler", scaler.to_json()}};
  for (std::size_t g = 0; g < groups.size(); ++g) {
    ClientSplit c;
    c.name = groups[g].name;
    for (std::size_t i : splits[g].train) c.train.push_back(apply_window(records[i], data.grid));
    for (std::size_t i : splits[g].test) c.test.push_back(apply_window(records[i], data.grid));
    for (std::size_t i : splits[g].oot) c.oot.push_back(apply_window(records[i], data.grid));
    if (c.train.empty()) throw InvalidInput("client '" + c.name + "' has no training records");
    data.clients.push_back(std::move(c));
  }

  std::vector<double> times;
  std::vector<int> ev;
  times_events(data.pooled_train(), times, ev);
  data.censoring = kaplan_meier(times, ev, /*reverse=*/true);
  data.horizons = config.eval_horizons.empty() ? default_eval_times(data.grid, times, ev)
                                               : config.eval_horizons;
  return data;
}

double scenario_sigma(const ExperimentConfig& config, const PreparedData& data, bool federated) {
  if (config.noise_multiplier) return *config.noise_multiplier;
  const FederationConfig& f = config.federation;
  auto for_size = [&](std::size_t n) {
    const double q = std::min(1.0, static_cast<double>(f.batch_size) / static_cast<double>(n));
    return calibrate_sigma(config.target_epsilon, f.dp.delta, q, total_steps(f, n));
  };
  if (!federated) {
    std::size_t n = 0;
    for (const auto& c : data.clients) n += c.train.size();
    return for_size(n);
  }
  double sigma = 0.0;
  for (const auto& c : data.clients) sigma = std::max(sigma, for_size(c.train.size()));
  return sigma;
}

HazardModel make_initial_model(const ExperimentConfig& config, const PreparedData& data,
                               std::uint64_t seed) {
  std::vector<int> dims{data.feature_width()};
  dims.insert(dims.end(), config.hidden.begin(), config.hidden.end());
  dims.push_back(data.grid.intervals());
  Rng rng = make_rng({seed, static_cast<std::uint64_t>(Stream::kInit)});
  return HazardModel::initialized(dims, rng, config.activation);
}

MetricReport evaluate_records(const HazardModel& model, const PreparedData& data,
                              const std::vector<SurvivalRecord>& records) {
  if (records.empty()) {
    MetricReport empty;
    empty.horizons = data.horizons;
    empty.mean_c_index = std::nan("");
    empty.ibs = std::nan("");
    return empty;
  }
  std::vector<double> times;
  std::vector<int> events;
  times_events(records, times, events);
  const SurvivalPredictions pred =
      predict_survival(model, design(records, data.feature_width()), data.grid);
  return evaluate_metrics(data.horizons, pred, times, events, data.censoring);
}

std::vector<ClientMetric> evaluate_clients(const HazardModel& model, const PreparedData& data,
                                           bool oot) {
  std::vector<ClientMetric> out;
  for (const auto& c : data.clients) {
    const auto& recs = oot ? c.oot : c.test;
    ClientMetric m;
    m.name = c.name;
    m.n = recs.size();
    if (!recs.empty()) {
      const MetricReport r = evaluate_records(model, data, recs);
      if (!std::isnan(r.mean_c_index)) m.c_index = r.mean_c_index;
      m.ibs = r.ibs;
    } else {
      m.ibs = std::nan("");
    }
    out.push_back(m);
  }
  return out;
}

ScenarioRun run_scenario(const ExperimentConfig& config, const PreparedData& data,
                         const Scenario& scenario, std::uint64_t seed) {
  ScenarioRun run;
  run.scenario = scenario;
  run.seed = seed;
  FederationConfig f = config.federation;
  f.regime = scenario.regime;
  f.seed = seed;
  if (scenario.regime != Regime::kNone) {
    run.sigma = scenario_sigma(config, data, scenario.federated);
    f.dp.noise_multiplier = run.sigma;
  }
  const HazardModel initial = make_initial_model(config, data, seed);

  if (scenario.federated) {
    std::vector<ClientState> clients;
    for (std::size_t k = 0; k < data.clients.size(); ++k) {
      clients.emplace_back(static_cast<int>(k), data.clients[k].name, data.clients[k].train,
                           data.grid);
    }
    run.result = run_federated(clients, f, initial);
  } else {
    ClientState pooled(0, "pooled", data.pooled_train(), data.grid);
    run.result = run_centralized(pooled, f, initial);
  }

  const HazardModel& model = run.result.model;
  const auto test = data.pooled_test();
  run.test = evaluate_records(model, data, test);
  const auto oot = data.pooled_oot();
  if (!oot.empty()) run.oot = evaluate_records(model, data, oot);
  run.client_test = evaluate_clients(model, data, false);
  if (!test.empty()) {
    std::vector<double> times;
    std::vector<int> events;
    times_events(test, times, events);
    const SurvivalPredictions pred =
        predict_survival(model, design(test, data.feature_width()), data.grid);
    std::vector<double> points;
    for (int l = 1; l <= data.grid.intervals(); ++l) points.push_back(data.grid.tau(l));
    run.calibration = calibration_curve(pred, times, events, points);
  }
  for (const auto& p : run.result.privacy) {
    run.epsilon = std::max(run.epsilon, p.composed.epsilon);
    run.epsilon_linear = std::max(run.epsilon_linear, p.epsilon_linear);
  }
  return run;
}

json model_to_json(const HazardModel& model) {
  const auto& p = model.parameters();
  return {{"layer_dims", model.layer_dims()},
          {"activation", model.activation() == Activation::kSelu ? "selu" : "tanh"},
          {"parameters", std::vector<double>(p.data(), p.data() + p.size())}};
}

HazardModel model_from_json(const json& j) {
  try {
    const auto dims = j.at("layer_dims").get<std::vector<int>>();
    const std::string act = j.value("activation", "selu");
    if (act != "selu" && act != "tanh") throw InvalidInput("unknown activation " + act);
    HazardModel model(dims, act == "selu" ? Activation::kSelu : Activation::kTanh);
    const auto params = j.at("parameters").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(params.size()) != model.num_parameters()) {
      throw DimensionMismatch("model file parameter count does not match layer_dims");
    }
    model.set_parameters(Eigen::Map<const Eigen::VectorXd>(
        params.data(), static_cast<Eigen::Index>(params.size())));
    return model;
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("model file: ") + e.what());
  }
}

json metric_report_to_json(const MetricReport& r) {
  json ci = json::array();
  for (const auto& c : r.c_index) ci.push_back(optional_json(c));
  return {{"horizons", r.horizons},
          {"c_index", ci},
          {"mean_c_index", std::isnan(r.mean_c_index) ? json(nullptr) : json(r.mean_c_index)},
          {"undefined_horizons", r.undefined_horizons},
          {"brier", r.brier},
          {"ibs", std::isnan(r.ibs) ? json(nullptr) : json(r.ibs)},
          {"clamped_weights", r.clamped_weights},
          {"n", r.n},
          {"events", r.events}};
}

std::vector<SummaryRow> summarize(const std::vector<ScenarioRun>& runs) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const ScenarioRun*>> by;
  for (const auto& r : runs) {
    const std::string s = r.scenario.name();
    if (!by.count(s)) order.push_back(s);
    by[s].push_back(&r);
  }
  std::vector<SummaryRow> rows;
  for (const auto& s : order) {
    std::vector<double> tci, tibs, oci, oibs, eps, epsl;
    SummaryRow row;
    row.scenario = s;
    for (const ScenarioRun* r : by[s]) {
      tci.push_back(r->test.mean_c_index);
      tibs.push_back(r->test.ibs);
      oci.push_back(r->oot ? r->oot->mean_c_index : std::nan(""));
      oibs.push_back(r->oot ? r->oot->ibs : std::nan(""));
      eps.push_back(r->epsilon);
      epsl.push_back(r->epsilon_linear);
      row.sigma = r->sigma;
    }
    row.seeds = tci.size();
    row.test_ci_mean = mean_of(tci);
    row.test_ci_std = sample_std(tci, row.test_ci_mean);
    row.test_ibs_mean = mean_of(tibs);
    row.test_ibs_std = sample_std(tibs, row.test_ibs_mean);
    row.oot_ci_mean = mean_of(oci);
    row.oot_ci_std = sample_std(oci, row.oot_ci_mean);
    row.oot_ibs_mean = mean_of(oibs);
    row.oot_ibs_std = sample_std(oibs, row.oot_ibs_mean);
    row.epsilon_mean = mean_of(eps);
    row.epsilon_linear_mean = mean_of(epsl);
    rows.push_back(row);
  }
  return rows;
}

void write_summary_csv(const std::vector<SummaryRow>& rows, const std::string& path) {
  std::string out =
      "scenario,seeds,test_ci_mean,test_ci_std,test_ibs_mean,test_ibs_std,oot_ci_mean,"
      "oot_ci_std,oot_ibs_mean,oot_ibs_std,epsilon_mean,epsilon_linear_mean,sigma\n";
  for (const auto& r : rows) {
    out += r.scenario + "," + std::to_string(r.seeds) + "," + fmt(r.test_ci_mean) + "," +
           fmt(r.test_ci_std) + "," + fmt(r.test_ibs_mean) + "," + fmt(r.test_ibs_std) + "," +
           fmt(r.oot_ci_mean) + "," + fmt(r.oot_ci_std) + "," + fmt(r.oot_ibs_mean) + "," +
           fmt(r.oot_ibs_std) + "," + fmt(r.epsilon_mean) + "," + fmt(r.epsilon_linear_mean) +
           "," + fmt(r.sigma) + "\n";
  }
  write_text(path, out);
}

std::vector<SummaryRow> run_experiment(const ExperimentConfig& config, int workers) {
  config.validate();
  ExperimentConfig cfg = config;
  cfg.federation.workers = std::max(1, workers);
  const fs::path root = fs::path(cfg.output_dir) / cfg.name;
  fs::create_directories(root);
  write_text(root / "resolved_config.json", config.to_json().dump(2) + "\n");

  std::vector<ScenarioRun> runs;
  for (std::uint64_t seed : cfg.seeds) {
    const PreparedData data = prepare_data(cfg, seed);
    for (const Scenario& s : cfg.scenarios) {
      std::cerr << "[train] seed " << seed << " " << s.name() << "\n";
      ScenarioRun run;
      try {
        run = run_scenario(cfg, data, s, seed);
      } catch (const RoundFailure& e) {
        throw Error("seed " + std::to_string(seed) + ", " + s.name() + ", round " +
                    std::to_string(e.round()) + ", client " + std::to_string(e.client_id()) +
                    ": " + e.what());
      } catch (const CalibrationFailure& e) {
        throw CalibrationFailure("seed " + std::to_string(seed) + ", " + s.name() + ": " +
                                 e.what());
      }
      write_run(root / s.name() / ("seed_" + std::to_string(seed)), run, data);
      runs.push_back(std::move(run));
    }
  }
  const auto rows = summarize(runs);
  write_summary_csv(rows, (root / "summary.csv").string());
  write_client_bars(runs, root / "client_bars.csv");
  return rows;
}

}  // namespace fsl
