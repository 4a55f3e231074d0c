#include <cmath>
#include <cstdio>

#include "fsl/data.hpp"
#include "fsl/errors.hpp"
#include "fsl/rng.hpp"

namespace fsl {
namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

std::string client_name(int k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "client_%02d", k);
  return buf;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (client_sizes.empty()) throw ConfigError("synthetic.client_sizes must be nonempty");
  for (int n : client_sizes) {
    if (n < 1) throw ConfigError("synthetic.client_sizes entries must be >= 1");
  }
  if (client_shifts.size() != client_sizes.size()) {
    throw ConfigError("synthetic.client_shifts needs one entry per client");
  }
  for (double a : client_shifts) {
    if (!std::isfinite(a)) throw ConfigError("synthetic.client_shifts must be finite");
  }
  if (features < 1) throw ConfigError("synthetic.features must be >= 1");
  if (!(censoring_rate >= 0.0 && censoring_rate < 1.0)) {
    throw ConfigError("synthetic.censoring_rate must lie in [0,1)");
  }
  if (intervals < 1) throw ConfigError("synthetic.intervals must be >= 1");
  if (!(interval_width > 0.0)) throw ConfigError("synthetic.interval_width must be positive");
  if (!(weight_scale >= 0.0)) throw ConfigError("synthetic.weight_scale must be >= 0");
  if (!(origination_span_days >= 1.0)) {
    throw ConfigError("synthetic.origination_span_days must be >= 1");
  }
}

SyntheticSpec SyntheticSpec::from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  try {
    if (j.contains("clients") && !j.contains("client_sizes")) {
      const int k = j.at("clients").get<int>();
      if (k < 1) throw ConfigError("synthetic.clients must be >= 1");
      s.client_sizes.assign(static_cast<std::size_t>(k), j.value("records_per_client", 5000));
      s.client_shifts.assign(static_cast<std::size_t>(k), 0.0);
    }
    s.client_sizes = j.value("client_sizes", s.client_sizes);
    s.client_shifts = j.value("client_shifts", s.client_shifts);
    s.features = j.value("features", s.features);
    s.weight_scale = j.value("weight_scale", s.weight_scale);
    s.baseline_logit = j.value("baseline_logit", s.baseline_logit);
    s.time_trend = j.value("time_trend", s.time_trend);
    s.censoring_rate = j.value("censoring_rate", s.censoring_rate);
    s.intervals = j.value("intervals", s.intervals);
    s.interval_width = j.value("interval_width", s.interval_width);
    s.origination_span_days = j.value("origination_span_days", s.origination_span_days);
    s.origination_start = j.value("origination_start", s.origination_start);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synthetic: ") + e.what());
  }
  s.validate();
  return s;
}

nlohmann::json SyntheticSpec::to_json() const {
  return {{"client_sizes", client_sizes},
          {"client_shifts", client_shifts},
          {"features", features},
          {"weight_scale", weight_scale},
          {"baseline_logit", baseline_logit},
          {"time_trend", time_trend},
          {"censoring_rate", censoring_rate},
          {"intervals", intervals},
          {"interval_width", interval_width},
          {"origination_span_days", origination_span_days},
          {"origination_start", origination_start},
          {"seed", seed}};
}

Eigen::VectorXd GroundTruth::hazards(int client, const Eigen::VectorXd& x) const {
  const double lin = client_shifts[static_cast<std::size_t>(client)] + weights.dot(x);
  return (time_logits.array() + lin).unaryExpr([](double z) { return sigmoid(z); });
}

nlohmann::json GroundTruth::to_json() const {
  return {{"weights", std::vector<double>(weights.data(), weights.data() + weights.size())},
          {"time_logits",
           std::vector<double>(time_logits.data(), time_logits.data() + time_logits.size())},
          {"client_shifts", client_shifts}};
}

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const int d = spec.features;
  const int T = spec.intervals;
  const double width = spec.interval_width;
  const double horizon = T * width;

  SyntheticDataset out;
  out.spec = spec;
  Rng truth_rng = make_rng({spec.seed, static_cast<std::uint64_t>(Stream::kGenerate)});
  std::normal_distribution<double> normal(0.0, 1.0);
  out.truth.weights.resize(d);
  for (int k = 0; k < d; ++k) out.truth.weights(k) = spec.weight_scale * normal(truth_rng);
  out.truth.time_logits.resize(T);
  for (int t = 0; t < T; ++t) {
    const double frac = T > 1 ? static_cast<double>(t) / (T - 1) : 0.0;
    out.truth.time_logits(t) = spec.baseline_logit + spec.time_trend * frac;
  }
  out.truth.client_shifts = spec.client_shifts;

  DatasetSchema& schema = out.table.schema;
  schema.time_column = "time";
  schema.event_column = "event";
  schema.region_column = "region";
  schema.origination_column = "origination";
  schema.reference_date = spec.origination_start;
  for (int k = 0; k < d; ++k) schema.features.push_back({"x" + std::to_string(k + 1)});

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t c = 0; c < spec.client_sizes.size(); ++c) {
    Rng rng = make_rng({spec.seed, static_cast<std::uint64_t>(Stream::kGenerate), c + 1});
    const std::string region = client_name(static_cast<int>(c));
    for (int i = 0; i < spec.client_sizes[c]; ++i) {
      Eigen::VectorXd x(d);
      for (int k = 0; k < d; ++k) x(k) = normal(rng);
      const Eigen::VectorXd h = out.truth.hazards(static_cast<int>(c), x);

      double event_time = -1.0;
      for (int t = 0; t < T && event_time < 0.0; ++t) {
        if (unit(rng) < h(t)) event_time = (t + unit(rng)) * width;
      }
      if (event_time < 0.0) {
        // Geometric tail beyond the window at the last interval's hazard.
        const double u = 1.0 - unit(rng);
        double extra = std::floor(std::log(u) / std::log1p(-h(T - 1)));
        if (!(extra < 1e12)) extra = 1e12;
        event_time = horizon + (extra + unit(rng)) * width;
      }

      RawRow row;
      row.region = region;
      row.origination = std::floor(unit(rng) * spec.origination_span_days);
      row.time = event_time;
      row.event = 1;
      if (unit(rng) < spec.censoring_rate) {
        const double censor_time = unit(rng) * horizon;
        if (censor_time < event_time) {
          row.time = censor_time;
          row.event = 0;
        }
      }
      row.numeric.reserve(static_cast<std::size_t>(d));
      for (int k = 0; k < d; ++k) row.numeric.emplace_back(x(k));
      out.table.rows.push_back(std::move(row));
    }
  }
  return out;
}

}  // namespace fsl
