#pragma once

// Experiment protocol: a JSON config describes the dataset, time grid, model,
// federation and privacy settings, the scenario grid
// {centralized, federated} x {none, classical, bayesian} and the seeds. The
// runner prepares data per seed, trains every requested scenario, evaluates
// on the test and out-of-time splits and writes a results bundle.

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "fsl/data.hpp"
#include "fsl/dp.hpp"
#include "fsl/federation.hpp"
#include "fsl/metrics.hpp"
#include "json.hpp"

namespace fsl {

struct CsvSource {
  std::string path;
  DatasetSchema schema;
};

struct Scenario {
  bool federated = false;
  Regime regime = Regime::kNone;

  std::string name() const;  // e.g. "federated_bayesian"
  static Scenario parse(const std::string& name);
  bool operator==(const Scenario&) const = default;
};

std::vector<Scenario> all_scenarios();

struct ExperimentConfig {
  std::string name = "experiment";
  std::string output_dir = "runs";
  std::variant<SyntheticSpec, CsvSource> dataset = SyntheticSpec{};
  int intervals = 24;
  double interval_width = 1.0;
  std::vector<int> hidden{128, 64, 64, 32, 32};
  Activation activation = Activation::kSelu;
  FederationConfig federation;
  // Classical calibration target; the noise multiplier is derived from it
  // unless `noise_multiplier` is set explicitly.
  double target_epsilon = 1.0;
  std::optional<double> noise_multiplier;
  PartitionSpec partition;
  SplitSpec split;
  std::optional<std::string> oot_cutoff_date;
  std::vector<double> eval_horizons;  // empty = default policy
  std::vector<Scenario> scenarios = all_scenarios();
  std::vector<std::uint64_t> seeds{42, 43, 44, 45, 46};

  // Throws ConfigError naming the offending field.
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::string& path);
  // Every default materialized.
  nlohmann::json to_json() const;
  void validate() const;
};

struct ClientSplit {
  std::string name;
  std::vector<SurvivalRecord> train;
  std::vector<SurvivalRecord> test;
  std::vector<SurvivalRecord> oot;
};

// Everything a seed needs: encoded, standardized, window-truncated records
// split per client, plus evaluation scaffolding fitted on training data.
struct PreparedData {
  TimeGrid grid{std::vector<double>{0.0, 1.0}};
  std::vector<ClientSplit> clients;
  std::vector<std::string> feature_names;
  KmCurve censoring;  // reversed KM on pooled training data
  std::vector<double> horizons;
  nlohmann::json preprocessing;  // encoder and scaler state

  int feature_width() const { return static_cast<int>(feature_names.size()); }
  std::vector<SurvivalRecord> pooled_train() const;
  std::vector<SurvivalRecord> pooled_test() const;
  std::vector<SurvivalRecord> pooled_oot() const;
};

PreparedData prepare_data(const ExperimentConfig& config, std::uint64_t seed);

// Classical sigma for the target epsilon: for the pooled client when
// centralized, else the largest over clients (every client meets the target).
double scenario_sigma(const ExperimentConfig& config, const PreparedData& data, bool federated);

struct ClientMetric {
  std::string name;
  std::size_t n = 0;
  std::optional<double> c_index;
  double ibs = 0.0;
};

struct ScenarioRun {
  Scenario scenario;
  std::uint64_t seed = 0;
  double sigma = 0.0;
  FederationResult result{HazardModel({1, 1}), {}, {}};
  MetricReport test;
  std::optional<MetricReport> oot;
  std::vector<ClientMetric> client_test;
  std::vector<CalibrationPoint> calibration;
  // Largest per-client ledger-composed epsilon and per-round linear sum.
  double epsilon = 0.0;
  double epsilon_linear = 0.0;
};

ScenarioRun run_scenario(const ExperimentConfig& config, const PreparedData& data,
                         const Scenario& scenario, std::uint64_t seed);

MetricReport evaluate_records(const HazardModel& model, const PreparedData& data,
                              const std::vector<SurvivalRecord>& records);

std::vector<ClientMetric> evaluate_clients(const HazardModel& model, const PreparedData& data,
                                           bool oot);

HazardModel make_initial_model(const ExperimentConfig& config, const PreparedData& data,
                               std::uint64_t seed);

// --- persistence -----------------------------------------------------------

nlohmann::json model_to_json(const HazardModel& model);
HazardModel model_from_json(const nlohmann::json& j);
nlohmann::json metric_report_to_json(const MetricReport& report);

struct SummaryRow {
  std::string scenario;
  std::size_t seeds = 0;
  double test_ci_mean = 0.0, test_ci_std = 0.0;
  double test_ibs_mean = 0.0, test_ibs_std = 0.0;
  double oot_ci_mean = 0.0, oot_ci_std = 0.0;
  double oot_ibs_mean = 0.0, oot_ibs_std = 0.0;
  double epsilon_mean = 0.0;
  double epsilon_linear_mean = 0.0;
  double sigma = 0.0;
};

// Mean and sample standard deviation per scenario.
std::vector<SummaryRow> summarize(const std::vector<ScenarioRun>& runs);
void write_summary_csv(const std::vector<SummaryRow>& rows, const std::string& path);

// Runs every scenario for every seed and writes
//   <out>/<name>/resolved_config.json
//   <out>/<name>/<scenario>/seed_<s>/{rounds.jsonl, metrics.json, ledger.csv,
//                                     model.json, calibration.csv, loss_curve.csv}
//   <out>/<name>/{summary.csv, client_bars.csv}
// Returns the summary rows.
std::vector<SummaryRow> run_experiment(const ExperimentConfig& config, int workers = 1);

}  // namespace fsl
