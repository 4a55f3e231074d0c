#pragma once

// Survival evaluation: Kaplan-Meier, time-dependent concordance, IPCW Brier
// score and its trapezoidal integral, calibration curves and expected credit
// loss.

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <vector>

#include "fsl/survival.hpp"

namespace fsl {

// Product-limit step function over the distinct observed times.
struct KmCurve {
  std::vector<double> times;
  std::vector<double> survival;
  std::vector<int> at_risk;
  std::vector<int> events;
  // Running Greenwood sum d / (n (n - d)).
  std::vector<double> greenwood;

  // Right-continuous value S(t).
  double at(double t) const;
  // Left limit S(t-).
  double before(double t) const;
  // Greenwood standard error of S(t).
  double standard_error(double t) const;
};

// With reverse = true the event indicators are flipped, which estimates the
// censoring survival function G.
KmCurve kaplan_meier(std::span<const double> times, std::span<const int> events,
                     bool reverse = false);

// Per-subject predicted survival on a time grid, read as a right-continuous
// step function: S(t|x) = S_l for tau_l <= t < tau_{l+1}, and 1 before tau_1.
struct SurvivalPredictions {
  TimeGrid grid;
  Eigen::MatrixXd survival;  // n x T

  Eigen::Index size() const { return survival.rows(); }
  double at(Eigen::Index subject, double t) const;
};

SurvivalPredictions predict_survival(const HazardModel& model, const Eigen::MatrixXd& x,
                                     const TimeGrid& grid);

// Time-dependent concordance for many horizons at once. Admissible pairs
// (i, j): T_i <= t*, delta_i = 1, T_j > T_i. Concordant when
// S(T_i|x_i) < S(T_i|x_j); ties count one half.
class ConcordanceCounter {
 public:
  ConcordanceCounter(const SurvivalPredictions& predictions, std::span<const double> times,
                     std::span<const int> events);

  // nullopt when no admissible pair exists.
  std::optional<double> at(double horizon) const;

 private:
  std::vector<double> event_times_;  // sorted ascending
  std::vector<double> concordant_prefix_;
  std::vector<double> admissible_prefix_;
};

std::optional<double> c_index_at(double horizon, const SurvivalPredictions& predictions,
                                 std::span<const double> times, std::span<const int> events);

struct MeanConcordance {
  std::vector<std::optional<double>> per_horizon;
  double mean = 0.0;
  int undefined = 0;
};

MeanConcordance mean_c_index(std::span<const double> horizons,
                             const SurvivalPredictions& predictions,
                             std::span<const double> times, std::span<const int> events);

inline constexpr double kCensoringWeightFloor = 1e-4;

struct BrierResult {
  double score = 0.0;
  int clamped = 0;  // IPCW weights that hit kCensoringWeightFloor
};

// IPCW Brier score at `horizon`; `censoring` is G estimated on training data.
BrierResult brier_at(double horizon, const SurvivalPredictions& predictions,
                     std::span<const double> times, std::span<const int> events,
                     const KmCurve& censoring);

// Trapezoidal integral of BS over the horizons, divided by t_m - t_1.
double integrated_brier(std::span<const double> horizons, std::span<const double> scores);

// Interval right-endpoints inside [first observed event time, 95th percentile
// of observed times]. Falls back to every endpoint inside the observed range
// when fewer than two survive.
std::vector<double> default_eval_times(const TimeGrid& grid, std::span<const double> times,
                                       std::span<const int> events);

struct MetricReport {
  std::vector<double> horizons;
  std::vector<std::optional<double>> c_index;
  double mean_c_index = 0.0;
  int undefined_horizons = 0;
  std::vector<double> brier;
  double ibs = 0.0;
  int clamped_weights = 0;
  std::size_t n = 0;
  std::size_t events = 0;
};

MetricReport evaluate_metrics(std::span<const double> horizons,
                              const SurvivalPredictions& predictions,
                              std::span<const double> times, std::span<const int> events,
                              const KmCurve& censoring);

enum class DefaultProbability {
  kUnconditional,  // S_{t-1} h_t
  kConditional,    // h_t as written
};

double expected_credit_loss(const HazardPrediction& prediction, const Eigen::VectorXd& lgd,
                            const Eigen::VectorXd& ead,
                            DefaultProbability reading = DefaultProbability::kUnconditional);

struct CalibrationPoint {
  double time = 0.0;
  double km = 1.0;
  double km_lo = 1.0;
  double km_hi = 1.0;
  double model_mean = 1.0;
};

// Mean predicted survival against KM with a Greenwood 95% band.
std::vector<CalibrationPoint> calibration_curve(const SurvivalPredictions& predictions,
                                                std::span<const double> times,
                                                std::span<const int> events,
                                                std::span<const double> grid_points);

}  // namespace fsl
