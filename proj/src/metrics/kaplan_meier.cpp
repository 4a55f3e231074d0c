#include <algorithm>
#include <cmath>
#include <numeric>

#include "fsl/errors.hpp"
#include "fsl/metrics.hpp"

namespace fsl {

KmCurve kaplan_meier(std::span<const double> times, std::span<const int> events, bool reverse) {
  if (times.empty()) throw InvalidInput("Kaplan-Meier needs at least one observation");
  if (times.size() != events.size()) throw DimensionMismatch("times and events differ in length");
  std::vector<std::size_t> order(times.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (double t : times) {
    if (!(t >= 0.0) || !std::isfinite(t)) throw InvalidInput("observed times must be >= 0");
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });

  KmCurve km;
  double s = 1.0;
  double gw = 0.0;
  auto at_risk = static_cast<int>(times.size());
  for (std::size_t i = 0; i < order.size();) {
    const double t = times[order[i]];
    int d = 0;
    int leaving = 0;
    for (; i < order.size() && times[order[i]] == t; ++i) {
      const int e = events[order[i]];
      d += reverse ? 1 - e : e;
      ++leaving;
    }
    if (d > 0) {
      s *= static_cast<double>(at_risk - d) / at_risk;
      if (at_risk > d) gw += static_cast<double>(d) / (static_cast<double>(at_risk) * (at_risk - d));
    }
    km.times.push_back(t);
    km.survival.push_back(s);
    km.at_risk.push_back(at_risk);
    km.events.push_back(d);
    km.greenwood.push_back(gw);
    at_risk -= leaving;
  }
  return km;
}

double KmCurve::at(double t) const {
  auto it = std::upper_bound(times.begin(), times.end(), t);
  if (it == times.begin()) return 1.0;
  return survival[static_cast<std::size_t>(it - times.begin()) - 1];
}

double KmCurve::before(double t) const {
  auto it = std::lower_bound(times.begin(), times.end(), t);
  if (it == times.begin()) return 1.0;
  return survival[static_cast<std::size_t>(it - times.begin()) - 1];
}

double KmCurve::standard_error(double t) const {
  auto it = std::upper_bound(times.begin(), times.end(), t);
  if (it == times.begin()) return 0.0;
  const auto k = static_cast<std::size_t>(it - times.begin()) - 1;
  if (survival[k] == 0.0) return 0.0;
  return survival[k] * std::sqrt(greenwood[k]);
}

}  // namespace fsl
