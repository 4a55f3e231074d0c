#include <cmath>
#include <limits>
#include <string>

#include "fsl/dp.hpp"
#include "fsl/errors.hpp"

namespace fsl {
namespace {

double log_binomial(int n, int k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

}  // namespace

double rdp_step_cost(double q, double noise_multiplier, int alpha) {
  if (!(q >= 0.0 && q <= 1.0)) throw InvalidInput("subsample rate must lie in [0,1]");
  if (!(noise_multiplier > 0.0)) throw InvalidInput("noise multiplier must be positive");
  if (alpha < 2) throw InvalidInput("Renyi order must be an integer >= 2");
  if (q == 0.0) return 0.0;
  const double inv_two_var = 1.0 / (2.0 * noise_multiplier * noise_multiplier);
  if (q == 1.0) return alpha * inv_two_var;

  const double log_q = std::log(q);
  const double log_1mq = std::log1p(-q);
  double log_a = -std::numeric_limits<double>::infinity();
  for (int k = 0; k <= alpha; ++k) {
    const double term = log_binomial(alpha, k) + k * log_q + (alpha - k) * log_1mq +
                        static_cast<double>(k) * (k - 1) * inv_two_var;
    log_a = log_add(log_a, term);
  }
  // A_alpha >= 1 analytically; rounding can push the log a hair below zero.
  return std::max(0.0, log_a) / (alpha - 1);
}

RdpLedger::RdpLedger(std::vector<int> orders) : orders_(std::move(orders)) {
  if (orders_.empty()) throw InvalidInput("RDP ledger needs at least one order");
  for (int a : orders_) {
    if (a < 2) throw InvalidInput("Renyi orders must be integers >= 2");
  }
  costs_.assign(orders_.size(), 0.0);
}

void RdpLedger::add_steps(double q, double noise_multiplier, long steps) {
  if (steps <= 0) return;
  for (std::size_t i = 0; i < orders_.size(); ++i) {
    costs_[i] += static_cast<double>(steps) * rdp_step_cost(q, noise_multiplier, orders_[i]);
  }
  steps_ += steps;
}

void RdpLedger::add(const RdpLedger& other) {
  if (other.orders_ != orders_) throw DimensionMismatch("RDP ledgers use different orders");
  for (std::size_t i = 0; i < costs_.size(); ++i) costs_[i] += other.costs_[i];
  steps_ += other.steps_;
}

PrivacySpend rdp_to_dp(const RdpLedger& ledger, double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw InvalidInput("delta must lie in (0,1)");
  const auto& orders = ledger.orders();
  if (orders.empty()) throw InvalidInput("empty order grid");
  PrivacySpend best{std::numeric_limits<double>::infinity(), delta, Regime::kClassical, 0};
  const double log_inv_delta = -std::log(delta);
  for (std::size_t i = 0; i < orders.size(); ++i) {
    const double eps = ledger.costs()[i] + log_inv_delta / (orders[i] - 1);
    if (eps < best.epsilon) {
      best.epsilon = eps;
      best.order = orders[i];
    }
  }
  return best;
}

double calibrate_sigma(double target_epsilon, double delta, double q, long total_steps,
                       const std::vector<int>& orders, const SigmaSearch& search) {
  if (!(target_epsilon > 0.0)) throw InvalidInput("target epsilon must be positive");
  auto epsilon_at = [&](double sigma) {
    RdpLedger ledger(orders);
    ledger.add_steps(q, sigma, total_steps);
    return rdp_to_dp(ledger, delta).epsilon;
  };

  double lo = search.lower;
  double hi = search.upper;
  if (epsilon_at(lo) <= target_epsilon) return lo;
  if (epsilon_at(hi) > target_epsilon) {
    throw CalibrationFailure("target epsilon " + std::to_string(target_epsilon) +
                             " unattainable with sigma <= " + std::to_string(hi));
  }
  // Invariant: eps(lo) > target >= eps(hi).
  for (int iter = 0; iter < 200; ++iter) {
    if (epsilon_at(hi) >= (1.0 - search.relative_slack) * target_epsilon) break;
    const double mid = 0.5 * (lo + hi);
    if (epsilon_at(mid) > target_epsilon) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return hi;
}

}  // namespace fsl
