#include <algorithm>
#include <cmath>
#include <string>

#include "fsl/errors.hpp"
#include "fsl/survival.hpp"

namespace fsl {

TimeGrid::TimeGrid(std::vector<double> boundaries) : boundaries_(std::move(boundaries)) {
  if (boundaries_.size() < 2) throw InvalidInput("time grid needs at least one interval");
  if (boundaries_.front() != 0.0) throw InvalidInput("time grid must start at 0");
  for (std::size_t i = 1; i < boundaries_.size(); ++i) {
    if (!(boundaries_[i] > boundaries_[i - 1]) || !std::isfinite(boundaries_[i])) {
      throw InvalidInput("time grid boundaries must be finite and strictly increasing");
    }
  }
}

TimeGrid TimeGrid::uniform(int intervals, double width) {
  if (intervals < 1 || !(width > 0.0)) throw InvalidInput("invalid uniform time grid");
  std::vector<double> b(static_cast<std::size_t>(intervals) + 1);
  for (int l = 0; l <= intervals; ++l) b[static_cast<std::size_t>(l)] = l * width;
  return TimeGrid(std::move(b));
}

int TimeGrid::completed_intervals(double t) const {
  auto it = std::upper_bound(boundaries_.begin() + 1, boundaries_.end(), t);
  return static_cast<int>(it - (boundaries_.begin() + 1));
}

void validate(const SurvivalRecord& record) {
  if (!std::isfinite(record.t) || record.t < 0.0) {
    throw InvalidInput("record time must be finite and nonnegative, got " +
                       std::to_string(record.t));
  }
  if (record.delta != 0 && record.delta != 1) {
    throw InvalidInput("event indicator must be 0 or 1");
  }
  if (!record.x.allFinite()) throw InvalidInput("record has non-finite covariates");
}

SurvivalRecord apply_window(SurvivalRecord record, const TimeGrid& grid) {
  if (record.t > grid.horizon()) {
    record.t = grid.horizon();
    record.delta = 0;
  }
  return record;
}

DiscretizedTarget discretize(const SurvivalRecord& record, const TimeGrid& grid) {
  validate(record);
  const int T = grid.intervals();
  DiscretizedTarget target{Eigen::VectorXd::Zero(T), Eigen::VectorXd::Zero(T)};

  const SurvivalRecord r = apply_window(record, grid);
  if (r.delta == 1) {
    // Event interval j (1-based) with tau_{j-1} <= t < tau_j; t == tau_T
    // belongs to the last interval.
    const int j = std::min(grid.completed_intervals(r.t) + 1, T);
    target.s_surv.head(j - 1).setOnes();
    target.s_fail(j - 1) = 1.0;
  } else {
    for (int l = 1; l <= T; ++l) {
      const double midpoint = 0.5 * (grid.tau(l - 1) + grid.tau(l));
      if (r.t >= midpoint) target.s_surv(l - 1) = 1.0;
    }
  }
  return target;
}

Eigen::VectorXd survival_curve(const HazardPrediction& prediction) {
  const auto& h = prediction.hazards;
  Eigen::VectorXd s(h.size());
  double running = 1.0;
  for (Eigen::Index l = 0; l < h.size(); ++l) {
    running *= 1.0 - h(l);
    s(l) = running;
  }
  return s;
}

double nll_loss(const HazardPrediction& prediction, const DiscretizedTarget& target) {
  const auto& h = prediction.hazards;
  if (h.size() != target.s_surv.size() || h.size() != target.s_fail.size()) {
    throw DimensionMismatch("prediction and target lengths differ");
  }
  double loss = 0.0;
  for (Eigen::Index l = 0; l < h.size(); ++l) {
    const double hc = std::clamp(h(l), kHazardFloor, 1.0 - kHazardFloor);
    if (target.s_surv(l) != 0.0) loss -= target.s_surv(l) * std::log1p(-hc);
    if (target.s_fail(l) != 0.0) loss -= target.s_fail(l) * std::log(hc);
  }
  return loss;
}

}  // namespace fsl
