#pragma once

// Dataset ingestion and preparation: CSV loading against a schema, one-hot
// and standardization fitted on training rows only, region-based client
// partitioning, per-client train/test/out-of-time splits, and a synthetic
// survival generator with persisted ground truth.

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fsl/survival.hpp"
#include "json.hpp"

namespace fsl {

enum class FeatureKind { kNumeric, kCategorical, kDate };

struct FeatureSpec {
  std::string name;
  FeatureKind kind = FeatureKind::kNumeric;
};

struct DatasetSchema {
  std::vector<FeatureSpec> features;
  std::string time_column;
  std::string event_column;
  std::string region_column;
  std::string origination_column;  // optional; enables out-of-time splits
  std::vector<std::string> drop;   // columns ignored even if listed as features
  // Categories seen fewer times than this in training go to the "other" bucket.
  int min_category_count = 10;
  std::string reference_date = "1970-01-01";
  // Fraction of malformed rows tolerated before loading fails.
  double max_malformed_fraction = 0.01;

  void validate() const;
  static DatasetSchema from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

// "YYYY-MM-DD" to days since `reference` ("YYYY-MM-DD"). Throws InvalidInput.
double days_from_reference(const std::string& iso_date, const std::string& reference);
std::string iso_date_from_days(double days, const std::string& reference);

// One parsed row before encoding. Numeric and date features are stored in
// schema order in `numeric` (missing = nullopt); categorical ones in
// `categorical`.
struct RawRow {
  std::string region;
  double time = 0.0;
  int event = 0;
  std::optional<double> origination;
  std::vector<std::optional<double>> numeric;
  std::vector<std::string> categorical;
  std::size_t line = 0;
};

struct RawTable {
  DatasetSchema schema;
  std::vector<RawRow> rows;
  std::vector<std::string> malformed;  // "line N: reason"
};

RawTable load_csv(const std::string& path, const DatasetSchema& schema);

// Imputes missing numerics to zero and one-hot encodes categoricals using a
// vocabulary fitted on training rows.
class FeatureEncoder {
 public:
  static FeatureEncoder fit(const DatasetSchema& schema, const std::vector<RawRow>& rows,
                            const std::vector<std::size_t>& train_indices);

  Eigen::VectorXd encode(const RawRow& row) const;
  const std::vector<std::string>& feature_names() const { return names_; }
  int width() const { return static_cast<int>(names_.size()); }
  nlohmann::json to_json() const;

 private:
  std::size_t numeric_count_ = 0;
  std::vector<std::vector<std::string>> vocab_;  // per categorical feature, "other" last
  std::vector<std::string> names_;
};

struct LabeledRecord {
  std::string region;
  SurvivalRecord record;
  std::optional<double> origination;
};

// load_csv + encoder fitted on every row.
std::vector<LabeledRecord> load_records(const std::string& path, const DatasetSchema& schema);

// Per-feature standardization fitted on training records.
struct Scaler {
  Eigen::VectorXd mean;
  Eigen::VectorXd stddev;  // population std; zero-variance features keep 1

  static Scaler fit(const std::vector<const SurvivalRecord*>& train);
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const;
  nlohmann::json to_json() const;
};

// Fits on `train` only and rescales every record in `all`.
Scaler standardize(const std::vector<const SurvivalRecord*>& train,
                   std::vector<SurvivalRecord*>& all);

struct PartitionSpec {
  int min_client_size = 1000;
  bool merge_small = true;
  std::string rest_name = "rest";
};

struct RegionGroup {
  std::string name;
  std::vector<std::size_t> indices;
  double event_rate = 0.0;
};

// Groups rows by region (sorted by name); regions smaller than the threshold
// are merged into one trailing "rest" client when merging is enabled.
std::vector<RegionGroup> partition_by_region(const std::vector<std::string>& regions,
                                             const std::vector<int>& events,
                                             const PartitionSpec& spec = {});

struct SplitSpec {
  double train_fraction = 0.8;
  std::optional<double> oot_cutoff;  // origination strictly after -> OOT
  std::uint64_t seed = 42;

  void validate() const;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  std::vector<std::size_t> oot;
};

// Splits one client's rows. `stream` distinguishes clients sharing a seed.
SplitIndices split(const std::vector<std::size_t>& indices,
                   const std::vector<std::optional<double>>& origination, const SplitSpec& spec,
                   std::uint64_t stream);

struct SyntheticSpec {
  std::vector<int> client_sizes{5000, 5000, 5000, 5000, 5000, 5000, 5000, 5000};
  // Additive logit shift per client (odds multiplier exp(shift)).
  std::vector<double> client_shifts{-0.3, -0.2, -0.1, 0.0, 0.0, 0.1, 0.2, 0.3};
  int features = 8;
  double weight_scale = 0.5;
  double baseline_logit = -3.5;
  double time_trend = 0.3;
  double censoring_rate = 0.3;
  int intervals = 24;
  double interval_width = 1.0;
  double origination_span_days = 1460.0;
  std::string origination_start = "2015-01-01";
  std::uint64_t seed = 42;

  void validate() const;
  static SyntheticSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct GroundTruth {
  Eigen::VectorXd weights;
  Eigen::VectorXd time_logits;  // baseline + trend per interval
  std::vector<double> client_shifts;

  // True hazards sigmoid(shift + w.x + b_t) for a subject of `client`.
  Eigen::VectorXd hazards(int client, const Eigen::VectorXd& x) const;
  nlohmann::json to_json() const;
};

struct SyntheticDataset {
  SyntheticSpec spec;
  GroundTruth truth;
  RawTable table;  // all-numeric schema; region = "client_<k>"
};

// Features iid N(0,1). Event interval drawn sequentially from the true
// hazards; survivors of the window keep the last interval's hazard, so with
// censoring_rate == 0 every record is an event. With probability
// censoring_rate a record gets a censoring time uniform on the window.
SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

void write_csv(const RawTable& table, const std::string& path);

}  // namespace fsl
