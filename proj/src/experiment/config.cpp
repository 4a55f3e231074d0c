#include <cmath>
#include <fstream>
#include <sstream>

#include "fsl/errors.hpp"
#include "fsl/experiment.hpp"

namespace fsl {
namespace {

using nlohmann::json;

template <typename T>
T read(const json& j, const std::string& key, const T& fallback, const std::string& path) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(path + "." + key + " has the wrong type");
  }
}

const json& section(const json& j, const std::string& key) {
  static const json empty = json::object();
  if (!j.contains(key)) return empty;
  if (!j.at(key).is_object()) throw ConfigError(key + " must be an object");
  return j.at(key);
}

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::kAdam;
  if (s == "sgd") return OptimizerKind::kSgd;
  throw ConfigError("federation.optimizer must be \"adam\" or \"sgd\"");
}

AggregationWeighting parse_weighting(const std::string& s) {
  if (s == "sample_count") return AggregationWeighting::kSampleCount;
  if (s == "uniform") return AggregationWeighting::kUniform;
  throw ConfigError("federation.weighting must be \"sample_count\" or \"uniform\"");
}

Activation parse_activation(const std::string& s) {
  if (s == "selu") return Activation::kSelu;
  if (s == "tanh") return Activation::kTanh;
  throw ConfigError("model.activation must be \"selu\" or \"tanh\"");
}

}  // namespace

std::string Scenario::name() const {
  return std::string(federated ? "federated_" : "centralized_") + to_string(regime);
}

Scenario Scenario::parse(const std::string& name) {
  const auto us = name.find('_');
  if (us == std::string::npos) throw ConfigError("unknown scenario \"" + name + "\"");
  const std::string mode = name.substr(0, us);
  Scenario s;
  if (mode == "federated") {
    s.federated = true;
  } else if (mode != "centralized") {
    throw ConfigError("unknown scenario \"" + name + "\"");
  }
  try {
    s.regime = parse_regime(name.substr(us + 1));
  } catch (const Error&) {
    throw ConfigError("unknown scenario \"" + name + "\"");
  }
  return s;
}

std::vector<Scenario> all_scenarios() {
  std::vector<Scenario> out;
  for (bool fed : {false, true}) {
    for (Regime r : {Regime::kNone, Regime::kClassical, Regime::kBayesian}) out.push_back({fed, r});
  }
  return out;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  ExperimentConfig c;
  c.name = read(j, "name", c.name, "config");
  c.output_dir = read(j, "output_dir", c.output_dir, "config");

  const json& ds = section(j, "dataset");
  const bool has_synth = ds.contains("synthetic");
  const bool has_csv = ds.contains("csv");
  if (has_synth && has_csv) {
    throw ConfigError("dataset needs exactly one of dataset.synthetic or dataset.csv");
  }
  if (has_synth) {
    c.dataset = SyntheticSpec::from_json(ds.at("synthetic"));
  } else if (has_csv) {
    CsvSource src;
    src.path = read<std::string>(ds, "csv", "", "dataset");
    if (src.path.empty()) throw ConfigError("dataset.csv must name a file");
    if (!ds.contains("schema")) throw ConfigError("dataset.schema is required with dataset.csv");
    const json& schema = ds.at("schema");
    if (schema.is_string()) {
      std::ifstream in(schema.get<std::string>());
      if (!in) throw ConfigError("dataset.schema: cannot open " + schema.get<std::string>());
      json parsed;
      try {
        in >> parsed;
      } catch (const json::exception& e) {
        throw ConfigError(std::string("dataset.schema: ") + e.what());
      }
      src.schema = DatasetSchema::from_json(parsed);
    } else {
      src.schema = DatasetSchema::from_json(schema);
    }
    c.dataset = src;
  }

  const json& grid = section(j, "time_grid");
  c.intervals = read(grid, "intervals", c.intervals, "time_grid");
  c.interval_width = read(grid, "width", c.interval_width, "time_grid");

  const json& model = section(j, "model");
  c.hidden = read(model, "hidden", c.hidden, "model");
  c.activation = parse_activation(read<std::string>(model, "activation", "selu", "model"));

  FederationConfig& f = c.federation;
  const json& fed = section(j, "federation");
  f.rounds = read(fed, "rounds", f.rounds, "federation");
  f.local_epochs = read(fed, "local_epochs", f.local_epochs, "federation");
  f.participation_rate = read(fed, "participation_rate", f.participation_rate, "federation");
  f.batch_size = read(fed, "batch_size", f.batch_size, "federation");
  f.learning_rate = read(fed, "learning_rate", f.learning_rate, "federation");
  f.optimizer = parse_optimizer(read<std::string>(fed, "optimizer", "adam", "federation"));
  f.weighting =
      parse_weighting(read<std::string>(fed, "weighting", "sample_count", "federation"));
  f.fallback_threshold = read(fed, "fallback_threshold", f.fallback_threshold, "federation");
  f.workers = read(fed, "workers", f.workers, "federation");

  const json& dp = section(j, "dp");
  f.dp.clip_norm = read(dp, "clip_norm", f.dp.clip_norm, "dp");
  f.dp.delta = read(dp, "delta", f.dp.delta, "dp");
  f.dp.target_epsilons = read(dp, "target_epsilons", f.dp.target_epsilons, "dp");
  c.target_epsilon = read(dp, "target_epsilon", c.target_epsilon, "dp");
  if (dp.contains("noise_multiplier") && !dp.at("noise_multiplier").is_null()) {
    c.noise_multiplier = read(dp, "noise_multiplier", 1.0, "dp");
  }

  const json& bdp = section(j, "bdp");
  f.bdp.orders = read(bdp, "orders", f.bdp.orders, "bdp");
  f.bdp.beta = read(bdp, "beta", f.bdp.beta, "bdp");
  f.bdp.gamma = read(bdp, "gamma", f.bdp.gamma, "bdp");
  f.bdp.mc_samples = read(bdp, "mc_samples", f.bdp.mc_samples, "bdp");

  const json& part = section(j, "partition");
  c.partition.min_client_size = read(part, "min_client_size", c.partition.min_client_size,
                                     "partition");
  c.partition.merge_small = read(part, "merge_small", c.partition.merge_small, "partition");
  c.partition.rest_name = read(part, "rest_name", c.partition.rest_name, "partition");

  const json& sp = section(j, "split");
  c.split.train_fraction = read(sp, "train_fraction", c.split.train_fraction, "split");
  if (sp.contains("oot_cutoff") && !sp.at("oot_cutoff").is_null()) {
    c.oot_cutoff_date = read<std::string>(sp, "oot_cutoff", "", "split");
  }

  const json& ev = section(j, "eval");
  c.eval_horizons = read(ev, "horizons", c.eval_horizons, "eval");

  if (j.contains("scenarios")) {
    const auto names = read<std::vector<std::string>>(j, "scenarios", {}, "config");
    c.scenarios.clear();
    for (const auto& n : names) c.scenarios.push_back(Scenario::parse(n));
  }
  c.seeds = read(j, "seeds", c.seeds, "config");
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  return from_json(j);
}

json ExperimentConfig::to_json() const {
  json j;
  j["name"] = name;
  j["output_dir"] = output_dir;
  if (const auto* s = std::get_if<SyntheticSpec>(&dataset)) {
    j["dataset"] = {{"synthetic", s->to_json()}};
  } else {
    const auto& csv = std::get<CsvSource>(dataset);
    j["dataset"] = {{"csv", csv.path}, {"schema", csv.schema.to_json()}};
  }
  j["time_grid"] = {{"intervals", intervals}, {"width", interval_width}};
  j["model"] = {{"hidden", hidden},
                {"activation", activation == Activation::kSelu ? "selu" : "tanh"}};
  const FederationConfig& f = federation;
  j["federation"] = {
      {"rounds", f.rounds},
      {"local_epochs", f.local_epochs},
      {"participation_rate", f.participation_rate},
      {"batch_size", f.batch_size},
      {"learning_rate", f.learning_rate},
      {"optimizer", f.optimizer == OptimizerKind::kAdam ? "adam" : "sgd"},
      {"weighting",
       f.weighting == AggregationWeighting::kSampleCount ? "sample_count" : "uniform"},
      {"fallback_threshold", f.fallback_threshold},
      {"workers", f.workers}};
  j["dp"] = {{"clip_norm", f.dp.clip_norm},
             {"delta", f.dp.delta},
             {"target_epsilon", target_epsilon},
             {"target_epsilons", f.dp.target_epsilons},
             {"noise_multiplier", noise_multiplier ? json(*noise_multiplier) : json(nullptr)}};
  j["bdp"] = {{"orders", f.bdp.orders},
              {"beta", f.bdp.beta},
              {"gamma", f.bdp.gamma},
              {"mc_samples", f.bdp.mc_samples}};
  j["partition"] = {{"min_client_size", partition.min_client_size},
                    {"merge_small", partition.merge_small},
                    {"rest_name", partition.rest_name}};
  j["split"] = {{"train_fraction", split.train_fraction},
                {"oot_cutoff", oot_cutoff_date ? json(*oot_cutoff_date) : json(nullptr)}};
  j["eval"] = {{"horizons", eval_horizons}};
  std::vector<std::string> names;
  for (const auto& s : scenarios) names.push_back(s.name());
  j["scenarios"] = names;
  j["seeds"] = seeds;
  return j;
}

void ExperimentConfig::validate() const {
  if (name.empty() || name.find('/') != std::string::npos) {
    throw ConfigError("name must be nonempty and contain no '/'");
  }
  if (intervals < 1) throw ConfigError("time_grid.intervals must be >= 1");
  if (!(interval_width > 0.0)) throw ConfigError("time_grid.width must be positive");
  for (int h : hidden) {
    if (h < 1) throw ConfigError("model.hidden entries must be >= 1");
  }
  try {
    federation.validate();
    federation.dp.validate();
    federation.bdp.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("federation: ") + e.what());
  }
  if (!(target_epsilon > 0.0)) throw ConfigError("dp.target_epsilon must be positive");
  if (noise_multiplier && !(*noise_multiplier > 0.0)) {
    throw ConfigError("dp.noise_multiplier must be positive");
  }
  if (!(split.train_fraction > 0.0 && split.train_fraction < 1.0)) {
    throw ConfigError("split.train_fraction must lie in (0,1)");
  }
  if (partition.min_client_size < 1) throw ConfigError("partition.min_client_size must be >= 1");
  for (std::size_t k = 0; k < eval_horizons.size(); ++k) {
    if (!(eval_horizons[k] > 0.0) || (k > 0 && eval_horizons[k] <= eval_horizons[k - 1])) {
      throw ConfigError("eval.horizons must be positive and strictly increasing");
    }
  }
  if (scenarios.empty()) throw ConfigError("scenarios must be nonempty");
  if (seeds.empty()) throw ConfigError("seeds must be nonempty");
  if (std::holds_alternative<CsvSource>(dataset)) {
    std::get<CsvSource>(dataset).schema.validate();
  }
}

}  // namespace fsl
