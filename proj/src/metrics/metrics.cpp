#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "fsl/errors.hpp"
#include "fsl/metrics.hpp"

namespace fsl {
namespace {

class Fenwick {
 public:
  explicit Fenwick(std::size_t n) : tree_(n + 1, 0) {}
  void add(std::size_t rank) {
    for (std::size_t i = rank + 1; i < tree_.size(); i += i & (~i + 1)) ++tree_[i];
  }
  // Number of inserted ranks <= rank.
  long count_le(std::size_t rank) const {
    long s = 0;
    for (std::size_t i = rank + 1; i > 0; i -= i & (~i + 1)) s += tree_[i];
    return s;
  }

 private:
  std::vector<long> tree_;
};

void check_lengths(const SurvivalPredictions& p, std::span<const double> times,
                   std::span<const int> events) {
  if (static_cast<std::size_t>(p.size()) != times.size() || times.size() != events.size()) {
    throw DimensionMismatch("predictions, times and events differ in length");
  }
}

}  // namespace

double SurvivalPredictions::at(Eigen::Index subject, double t) const {
  const int l = grid.completed_intervals(t);
  return l == 0 ? 1.0 : survival(subject, l - 1);
}

SurvivalPredictions predict_survival(const HazardModel& model, const Eigen::MatrixXd& x,
                                     const TimeGrid& grid) {
  if (model.output_dim() != grid.intervals()) {
    throw DimensionMismatch("model output width differs from the time grid");
  }
  const Eigen::MatrixXd h = model.forward_batch(x);
  Eigen::MatrixXd s(h.rows(), h.cols());
  for (Eigen::Index i = 0; i < h.rows(); ++i) {
    double running = 1.0;
    for (Eigen::Index l = 0; l < h.cols(); ++l) {
      running *= 1.0 - h(i, l);
      s(i, l) = running;
    }
  }
  return {grid, std::move(s)};
}

ConcordanceCounter::ConcordanceCounter(const SurvivalPredictions& predictions,
                                       std::span<const double> times,
                                       std::span<const int> events) {
  check_lengths(predictions, times, events);
  const std::size_t n = times.size();
  std::vector<std::size_t> by_time_desc(n);
  std::iota(by_time_desc.begin(), by_time_desc.end(), std::size_t{0});
  std::stable_sort(by_time_desc.begin(), by_time_desc.end(),
                   [&](std::size_t a, std::size_t b) { return times[a] > times[b]; });

  // Comparisons at T_i only depend on how many grid intervals T_i completes,
  // so events are grouped by that count and each group is one sweep.
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) {
    if (events[i] == 1) groups[predictions.grid.completed_intervals(times[i])].push_back(i);
  }

  std::vector<double> concordant(n, 0.0);
  std::vector<double> admissible(n, 0.0);
  for (const auto& [l, members] : groups) {
    std::vector<double> score(n);
    for (std::size_t j = 0; j < n; ++j) {
      score[j] = l == 0 ? 1.0 : predictions.survival(static_cast<Eigen::Index>(j), l - 1);
    }
    std::vector<double> sorted = score;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    auto rank_of = [&](double v) {
      return static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), v) -
                                      sorted.begin());
    };
    std::vector<bool> is_member(n, false);
    for (std::size_t i : members) is_member[i] = true;

    Fenwick tree(sorted.size());
    long inserted = 0;
    for (std::size_t k = 0; k < n;) {
      const double t = times[by_time_desc[k]];
      std::size_t end = k;
      while (end < n && times[by_time_desc[end]] == t) ++end;
      // Everything inserted so far has T_j > t.
      for (std::size_t m = k; m < end; ++m) {
        const std::size_t i = by_time_desc[m];
        if (!is_member[i]) continue;
        const std::size_t r = rank_of(score[i]);
        const long le = tree.count_le(r);
        const long less = r == 0 ? 0 : tree.count_le(r - 1);
        const long greater = inserted - le;
        const long equal = le - less;
        concordant[i] = static_cast<double>(greater) + 0.5 * static_cast<double>(equal);
        admissible[i] = static_cast<double>(inserted);
      }
      for (std::size_t m = k; m < end; ++m) {
        tree.add(rank_of(score[by_time_desc[m]]));
        ++inserted;
      }
      k = end;
    }
  }

  std::vector<std::size_t> event_order;
  for (std::size_t i = 0; i < n; ++i) {
    if (events[i] == 1) event_order.push_back(i);
  }
  std::stable_sort(event_order.begin(), event_order.end(),
                   [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });
  double c = 0.0;
  double a = 0.0;
  for (std::size_t i : event_order) {
    c += concordant[i];
    a += admissible[i];
    event_times_.push_back(times[i]);
    concordant_prefix_.push_back(c);
    admissible_prefix_.push_back(a);
  }
}

std::optional<double> ConcordanceCounter::at(double horizon) const {
  auto it = std::upper_bound(event_times_.begin(), event_times_.end(), horizon);
  if (it == event_times_.begin()) return std::nullopt;
  const auto k = static_cast<std::size_t>(it - event_times_.begin()) - 1;
  if (admissible_prefix_[k] == 0.0) return std::nullopt;
  return concordant_prefix_[k] / admissible_prefix_[k];
}

std::optional<double> c_index_at(double horizon, const SurvivalPredictions& predictions,
                                 std::span<const double> times, std::span<const int> events) {
  return ConcordanceCounter(predictions, times, events).at(horizon);
}

MeanConcordance mean_c_index(std::span<const double> horizons,
                             const SurvivalPredictions& predictions,
                             std::span<const double> times, std::span<const int> events) {
  const ConcordanceCounter counter(predictions, times, events);
  MeanConcordance out;
  double sum = 0.0;
  int defined = 0;
  for (double h : horizons) {
    auto c = counter.at(h);
    out.per_horizon.push_back(c);
    if (c) {
      sum += *c;
      ++defined;
    } else {
      ++out.undefined;
    }
  }
  out.mean = defined > 0 ? sum / defined : std::nan("");
  return out;
}

BrierResult brier_at(double horizon, const SurvivalPredictions& predictions,
                     std::span<const double> times, std::span<const int> events,
                     const KmCurve& censoring) {
  check_lengths(predictions, times, events);
  if (times.empty()) throw InvalidInput("Brier score needs at least one subject");
  BrierResult out;
  auto weight = [&](double g) {
    if (g < kCensoringWeightFloor) {
      ++out.clamped;
      return kCensoringWeightFloor;
    }
    return g;
  };
  double sum = 0.0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double s = predictions.at(static_cast<Eigen::Index>(i), horizon);
    if (times[i] <= horizon && events[i] == 1) {
      sum += s * s / weight(censoring.before(times[i]));
    } else if (times[i] > horizon) {
      sum += (1.0 - s) * (1.0 - s) / weight(censoring.at(horizon));
    }
  }
  out.score = sum / static_cast<double>(times.size());
  return out;
}

double integrated_brier(std::span<const double> horizons, std::span<const double> scores) {
  if (horizons.size() != scores.size()) throw DimensionMismatch("one score per horizon");
  if (horizons.size() < 2) throw InvalidInput("integrated Brier score needs >= 2 horizons");
  double area = 0.0;
  for (std::size_t k = 0; k + 1 < horizons.size(); ++k) {
    area += 0.5 * (scores[k] + scores[k + 1]) * (horizons[k + 1] - horizons[k]);
  }
  return area / (horizons.back() - horizons.front());
}

std::vector<double> default_eval_times(const TimeGrid& grid, std::span<const double> times,
                                       std::span<const int> events) {
  if (times.empty()) return {};
  std::vector<double> sorted(times.begin(), times.end());
  std::sort(sorted.begin(), sorted.end());
  // Linear-interpolated 95th percentile.
  const double pos = 0.95 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double p95 = sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);

  double first_event = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (events[i] == 1) first_event = std::min(first_event, times[i]);
  }
  std::vector<double> out;
  for (int l = 1; l <= grid.intervals(); ++l) {
    const double tau = grid.tau(l);
    if (tau >= first_event && tau <= p95) out.push_back(tau);
  }
  if (out.size() < 2) {
    out.clear();
    for (int l = 1; l <= grid.intervals(); ++l) {
      const double tau = grid.tau(l);
      if (tau >= sorted.front() && tau <= sorted.back()) out.push_back(tau);
    }
  }
  return out;
}

MetricReport evaluate_metrics(std::span<const double> horizons,
                              const SurvivalPredictions& predictions,
                              std::span<const double> times, std::span<const int> events,
                              const KmCurve& censoring) {
  MetricReport report;
  report.horizons.assign(horizons.begin(), horizons.end());
  report.n = times.size();
  report.events = static_cast<std::size_t>(std::count(events.begin(), events.end(), 1));
  const MeanConcordance mc = mean_c_index(horizons, predictions, times, events);
  report.c_index = mc.per_horizon;
  report.mean_c_index = mc.mean;
  report.undefined_horizons = mc.undefined;
  for (double h : horizons) {
    const BrierResult b = brier_at(h, predictions, times, events, censoring);
    report.brier.push_back(b.score);
    report.clamped_weights += b.clamped;
  }
  report.ibs = horizons.size() >= 2 ? integrated_brier(horizons, report.brier)
                                    : (report.brier.empty() ? std::nan("") : report.brier[0]);
  return report;
}

double expected_credit_loss(const HazardPrediction& prediction, const Eigen::VectorXd& lgd,
                            const Eigen::VectorXd& ead, DefaultProbability reading) {
  const auto& h = prediction.hazards;
  if (lgd.size() != h.size() || ead.size() != h.size()) {
    throw DimensionMismatch("LGD and EAD need one entry per interval");
  }
  if ((lgd.array() < 0.0).any() || (ead.array() < 0.0).any()) {
    throw InvalidInput("LGD and EAD must be nonnegative");
  }
  double ecl = 0.0;
  double survived = 1.0;
  for (Eigen::Index t = 0; t < h.size(); ++t) {
    const double pd = reading == DefaultProbability::kUnconditional ? survived * h(t) : h(t);
    ecl += pd * lgd(t) * ead(t);
    survived *= 1.0 - h(t);
  }
  return ecl;
}

std::vector<CalibrationPoint> calibration_curve(const SurvivalPredictions& predictions,
                                                std::span<const double> times,
                                                std::span<const int> events,
                                                std::span<const double> grid_points) {
  check_lengths(predictions, times, events);
  const KmCurve km = kaplan_meier(times, events);
  std::vector<CalibrationPoint> out;
  for (double t : grid_points) {
    CalibrationPoint p;
    p.time = t;
    p.km = km.at(t);
    const double half = 1.959963984540054 * km.standard_error(t);
    p.km_lo = std::clamp(p.km - half, 0.0, 1.0);
    p.km_hi = std::clamp(p.km + half, 0.0, 1.0);
    double sum = 0.0;
    for (Eigen::Index i = 0; i < predictions.size(); ++i) sum += predictions.at(i, t);
    p.model_mean = sum / static_cast<double>(predictions.size());
    out.push_back(p);
  }
  return out;
}

}  // namespace fsl
