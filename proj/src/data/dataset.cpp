#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include "fsl/data.hpp"
#include "fsl/errors.hpp"
#include "fsl/rng.hpp"

namespace fsl {
namespace {

std::string kind_name(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::kNumeric:
      return "numeric";
    case FeatureKind::kCategorical:
      return "categorical";
    case FeatureKind::kDate:
      return "date";
  }
  return "numeric";
}

FeatureKind parse_kind(const std::string& s) {
  if (s == "numeric") return FeatureKind::kNumeric;
  if (s == "categorical") return FeatureKind::kCategorical;
  if (s == "date") return FeatureKind::kDate;
  throw ConfigError("schema: unknown feature kind '" + s + "'");
}

bool is_dropped(const DatasetSchema& schema, const std::string& name) {
  return std::find(schema.drop.begin(), schema.drop.end(), name) != schema.drop.end();
}

std::vector<FeatureSpec> active_features(const DatasetSchema& schema) {
  std::vector<FeatureSpec> out;
  for (const auto& f : schema.features) {
    if (!is_dropped(schema, f.name)) out.push_back(f);
  }
  return out;
}

// RFC-4180 style: commas separate, double quotes wrap, "" escapes a quote.
std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

std::optional<double> parse_number(const std::string& s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw InvalidInput("not a finite number: '" + s + "'");
  }
  return v;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::chrono::sys_days parse_iso(const std::string& s) {
  int y = 0;
  unsigned m = 0;
  unsigned d = 0;
  char dash1 = 0;
  char dash2 = 0;
  std::istringstream in(s);
  in >> y >> dash1 >> m >> dash2 >> d;
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m},
                                        std::chrono::day{d}};
  if (!in || dash1 != '-' || dash2 != '-' || !ymd.ok() || in.peek() != EOF) {
    throw InvalidInput("not an ISO-8601 date: '" + s + "'");
  }
  return std::chrono::sys_days{ymd};
}

}  // namespace

double days_from_reference(const std::string& iso_date, const std::string& reference) {
  return static_cast<double>((parse_iso(iso_date) - parse_iso(reference)).count());
}

std::string iso_date_from_days(double days, const std::string& reference) {
  const auto d = parse_iso(reference) + std::chrono::days{static_cast<long>(std::floor(days))};
  const std::chrono::year_month_day ymd{d};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

void DatasetSchema::validate() const {
  if (time_column.empty()) throw ConfigError("schema: time column missing");
  if (event_column.empty()) throw ConfigError("schema: event column missing");
  if (region_column.empty()) throw ConfigError("schema: region column missing");
  const std::set<std::string> roles{time_column, event_column, region_column};
  if (roles.size() != 3) throw ConfigError("schema: time/event/region columns must be distinct");
  const auto active = active_features(*this);
  if (active.empty()) throw ConfigError("schema: empty feature set");
  for (const auto& f : active) {
    if (roles.count(f.name) != 0 || f.name == origination_column) {
      throw ConfigError("schema: feature '" + f.name + "' reuses a role column");
    }
  }
  if (min_category_count < 1) throw ConfigError("schema: min_category_count must be >= 1");
  parse_iso(reference_date);
}

DatasetSchema DatasetSchema::from_json(const nlohmann::json& j) {
  DatasetSchema s;
  try {
    s.time_column = j.at("time").get<std::string>();
    s.event_column = j.at("event").get<std::string>();
    s.region_column = j.at("region").get<std::string>();
    s.origination_column = j.value("origination", std::string{});
    s.drop = j.value("drop", std::vector<std::string>{});
    s.min_category_count = j.value("min_category_count", s.min_category_count);
    s.reference_date = j.value("reference_date", s.reference_date);
    s.max_malformed_fraction = j.value("max_malformed_fraction", s.max_malformed_fraction);
    for (const auto& f : j.at("features")) {
      s.features.push_back({f.at("name").get<std::string>(),
                            parse_kind(f.value("kind", std::string{"numeric"}))});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("schema: ") + e.what());
  }
  s.validate();
  return s;
}

nlohmann::json DatasetSchema::to_json() const {
  nlohmann::json features_json = nlohmann::json::array();
  for (const auto& f : features) features_json.push_back({{"name", f.name}, {"kind", kind_name(f.kind)}});
  return {{"time", time_column},
          {"event", event_column},
          {"region", region_column},
          {"origination", origination_column},
          {"drop", drop},
          {"min_category_count", min_category_count},
          {"reference_date", reference_date},
          {"max_malformed_fraction", max_malformed_fraction},
          {"features", features_json}};
}

RawTable load_csv(const std::string& path, const DatasetSchema& schema) {
  schema.validate();
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw InvalidInput("'" + path + "' is empty");
  const auto header = split_csv_line(line);
  std::unordered_map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  auto require = [&](const std::string& name) {
    auto it = col.find(name);
    if (it == col.end()) throw InvalidInput("'" + path + "' lacks column '" + name + "'");
    return it->second;
  };

  const std::size_t c_time = require(schema.time_column);
  const std::size_t c_event = require(schema.event_column);
  const std::size_t c_region = require(schema.region_column);
  const std::optional<std::size_t> c_orig =
      schema.origination_column.empty() ? std::nullopt
                                        : std::optional<std::size_t>(require(schema.origination_column));
  std::vector<std::pair<FeatureKind, std::size_t>> numeric_cols;
  std::vector<std::size_t> categorical_cols;
  for (const auto& f : active_features(schema)) {
    if (f.kind == FeatureKind::kCategorical) {
      categorical_cols.push_back(require(f.name));
    } else {
      numeric_cols.emplace_back(f.kind, require(f.name));
    }
  }

  RawTable table{schema, {}, {}};
  std::size_t line_no = 1;
  std::size_t total = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    ++total;
    try {
      const auto fields = split_csv_line(line);
      if (fields.size() != header.size()) {
        throw InvalidInput("expected " + std::to_string(header.size()) + " fields, got " +
                           std::to_string(fields.size()));
      }
      RawRow row;
      row.line = line_no;
      row.region = fields[c_region];
      const auto t = parse_number(fields[c_time]);
      if (!t || *t < 0.0) throw InvalidInput("time must be a nonnegative number");
      row.time = *t;
      const auto e = parse_number(fields[c_event]);
      if (!e || (*e != 0.0 && *e != 1.0)) throw InvalidInput("event must be 0 or 1");
      row.event = static_cast<int>(*e);
      if (c_orig && !fields[*c_orig].empty()) {
        row.origination = days_from_reference(fields[*c_orig], schema.reference_date);
      }
      for (const auto& [kind, c] : numeric_cols) {
        if (kind == FeatureKind::kDate) {
          row.numeric.push_back(fields[c].empty() ? std::nullopt
                                                  : std::optional<double>(days_from_reference(
                                                        fields[c], schema.reference_date)));
        } else {
          row.numeric.push_back(parse_number(fields[c]));
        }
      }
      for (std::size_t c : categorical_cols) row.categorical.push_back(fields[c]);
      table.rows.push_back(std::move(row));
    } catch (const InvalidInput& err) {
      table.malformed.push_back("line " + std::to_string(line_no) + ": " + err.what());
    }
  }
  if (total > 0 && static_cast<double>(table.malformed.size()) >
                       schema.max_malformed_fraction * static_cast<double>(total)) {
    std::string msg = "'" + path + "': " + std::to_string(table.malformed.size()) + " of " +
                      std::to_string(total) + " rows malformed";
    for (std::size_t i = 0; i < std::min<std::size_t>(5, table.malformed.size()); ++i) {
      msg += "\n  " + table.malformed[i];
    }
    throw InvalidInput(msg);
  }
  return table;
}

FeatureEncoder FeatureEncoder::fit(const DatasetSchema& schema, const std::vector<RawRow>& rows,
                                   const std::vector<std::size_t>& train_indices) {
  FeatureEncoder enc;
  std::vector<std::string> categorical_names;
  for (const auto& f : active_features(schema)) {
    if (f.kind == FeatureKind::kCategorical) {
      categorical_names.push_back(f.name);
    } else {
      enc.names_.push_back(f.name);
      ++enc.numeric_count_;
    }
  }
  for (std::size_t c = 0; c < categorical_names.size(); ++c) {
    std::map<std::string, int> counts;
    for (std::size_t i : train_indices) ++counts[rows[i].categorical[c]];
    std::vector<std::string> vocab;
    for (const auto& [value, count] : counts) {
      if (count >= schema.min_category_count && value != "other") vocab.push_back(value);
    }
    vocab.push_back("other");
    for (const auto& v : vocab) enc.names_.push_back(categorical_names[c] + "=" + v);
    enc.vocab_.push_back(std::move(vocab));
  }
  return enc;
}

Eigen::VectorXd FeatureEncoder::encode(const RawRow& row) const {
  if (row.numeric.size() != numeric_count_ || row.categorical.size() != vocab_.size()) {
    throw DimensionMismatch("row does not match the encoder's schema");
  }
  Eigen::VectorXd x = Eigen::VectorXd::Zero(width());
  Eigen::Index k = 0;
  for (const auto& v : row.numeric) x(k++) = v.value_or(0.0);
  for (std::size_t c = 0; c < vocab_.size(); ++c) {
    const auto& vocab = vocab_[c];
    auto it = std::find(vocab.begin(), vocab.end() - 1, row.categorical[c]);
    x(k + (it - vocab.begin())) = 1.0;
    k += static_cast<Eigen::Index>(vocab.size());
  }
  return x;
}

nlohmann::json FeatureEncoder::to_json() const {
  return {{"features", names_}, {"categorical_vocab", vocab_}};
}

std::vector<LabeledRecord> load_records(const std::string& path, const DatasetSchema& schema) {
  const RawTable table = load_csv(path, schema);
  std::vector<std::size_t> all(table.rows.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const FeatureEncoder enc = FeatureEncoder::fit(schema, table.rows, all);
  std::vector<LabeledRecord> out;
  out.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    out.push_back({row.region, {enc.encode(row), row.time, row.event}, row.origination});
  }
  return out;
}

Scaler Scaler::fit(const std::vector<const SurvivalRecord*>& train) {
  if (train.empty()) throw InvalidInput("cannot fit a scaler on an empty training set");
  const Eigen::Index d = train.front()->x.size();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
  for (const auto* r : train) mean += r->x;
  mean /= static_cast<double>(train.size());
  Eigen::VectorXd var = Eigen::VectorXd::Zero(d);
  for (const auto* r : train) var += (r->x - mean).cwiseAbs2();
  var /= static_cast<double>(train.size());
  Scaler s{mean, var.cwiseSqrt()};
  for (Eigen::Index k = 0; k < d; ++k) {
    // Zero-variance features pass through unscaled.
    if (!(s.stddev(k) > 1e-12)) {
      s.mean(k) = 0.0;
      s.stddev(k) = 1.0;
    }
  }
  return s;
}

Eigen::VectorXd Scaler::apply(const Eigen::VectorXd& x) const {
  return (x - mean).cwiseQuotient(stddev);
}

nlohmann::json Scaler::to_json() const {
  return {{"mean", std::vector<double>(mean.data(), mean.data() + mean.size())},
          {"stddev", std::vector<double>(stddev.data(), stddev.data() + stddev.size())}};
}

Scaler standardize(const std::vector<const SurvivalRecord*>& train,
                   std::vector<SurvivalRecord*>& all) {
  const Scaler s = Scaler::fit(train);
  for (auto* r : all) r->x = s.apply(r->x);
  return s;
}

std::vector<RegionGroup> partition_by_region(const std::vector<std::string>& regions,
                                             const std::vector<int>& events,
                                             const PartitionSpec& spec) {
  if (regions.size() != events.size()) throw DimensionMismatch("one event flag per row");
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < regions.size(); ++i) groups[regions[i]].push_back(i);

  std::vector<RegionGroup> out;
  RegionGroup rest{spec.rest_name, {}, 0.0};
  for (auto& [name, idx] : groups) {
    if (spec.merge_small && groups.size() > 1 &&
        static_cast<int>(idx.size()) < spec.min_client_size) {
      rest.indices.insert(rest.indices.end(), idx.begin(), idx.end());
    } else {
      out.push_back({name, std::move(idx), 0.0});
    }
  }
  if (!rest.indices.empty()) {
    std::sort(rest.indices.begin(), rest.indices.end());
    out.push_back(std::move(rest));
  }
  for (auto& g : out) {
    double ev = 0.0;
    for (std::size_t i : g.indices) ev += events[i];
    g.event_rate = ev / static_cast<double>(g.indices.size());
  }
  return out;
}

void SplitSpec::validate() const {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("split.train_fraction must lie in (0,1)");
  }
}

SplitIndices split(const std::vector<std::size_t>& indices,
                   const std::vector<std::optional<double>>& origination, const SplitSpec& spec,
                   std::uint64_t stream) {
  spec.validate();
  SplitIndices out;
  std::vector<std::size_t> in_time;
  for (std::size_t i : indices) {
    const auto& o = origination[i];
    if (spec.oot_cutoff && o && *o > *spec.oot_cutoff) {
      out.oot.push_back(i);
    } else {
      in_time.push_back(i);
    }
  }
  Rng rng = make_rng({spec.seed, stream, static_cast<std::uint64_t>(Stream::kSplit)});
  std::shuffle(in_time.begin(), in_time.end(), rng);
  const auto n_train = static_cast<std::size_t>(
      std::llround(spec.train_fraction * static_cast<double>(in_time.size())));
  out.train.assign(in_time.begin(), in_time.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.test.assign(in_time.begin() + static_cast<std::ptrdiff_t>(n_train), in_time.end());
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

void write_csv(const RawTable& table, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write '" + path + "'");
  const auto& schema = table.schema;
  std::vector<std::string> header{schema.region_column};
  if (!schema.origination_column.empty()) header.push_back(schema.origination_column);
  header.push_back(schema.time_column);
  header.push_back(schema.event_column);
  std::vector<FeatureSpec> numeric;
  std::vector<FeatureSpec> categorical;
  for (const auto& f : active_features(schema)) {
    (f.kind == FeatureKind::kCategorical ? categorical : numeric).push_back(f);
  }
  for (const auto& f : numeric) header.push_back(f.name);
  for (const auto& f : categorical) header.push_back(f.name);
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << csv_escape(header[i]);
  out << "\n";

  for (const auto& row : table.rows) {
    out << csv_escape(row.region);
    if (!schema.origination_column.empty()) {
      out << "," << (row.origination ? iso_date_from_days(*row.origination, schema.reference_date) : "");
    }
    out << "," << format_number(row.time) << "," << row.event;
    for (std::size_t k = 0; k < numeric.size(); ++k) {
      out << ",";
      const auto& v = row.numeric[k];
      if (!v) continue;
      if (numeric[k].kind == FeatureKind::kDate) {
        out << iso_date_from_days(*v, schema.reference_date);
      } else {
        out << format_number(*v);
      }
    }
    for (const auto& c : row.categorical) out << "," << csv_escape(c);
    out << "\n";
  }
}

}  // namespace fsl
