#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/distributions/students_t.hpp>

#include "fsl/dp.hpp"
#include "fsl/errors.hpp"

namespace fsl {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// log E_{K~Bin(n,q)} exp(scale * (K^2 + sign*K)), summed exactly over K.
double log_binomial_moment(int n, double q, double scale, int sign) {
  if (scale == 0.0 || q == 0.0) return 0.0;
  const double log_q = std::log(q);
  const double log_1mq = q < 1.0 ? std::log1p(-q) : kNegInf;
  double hi = kNegInf;
  std::vector<double> terms;
  terms.reserve(static_cast<std::size_t>(n) + 1);
  for (int k = 0; k <= n; ++k) {
    if (q == 1.0 && k < n) continue;
    const double log_pmf = std::lgamma(n + 1.0) - std::lgamma(k + 1.0) -
                           std::lgamma(n - k + 1.0) + k * log_q +
                           (k < n ? (n - k) * log_1mq : 0.0);
    const double kk = static_cast<double>(k);
    const double t = log_pmf + scale * (kk * kk + sign * kk);
    terms.push_back(t);
    hi = std::max(hi, t);
  }
  double sum = 0.0;
  for (double t : terms) sum += std::exp(t - hi);
  return hi + std::log(sum);
}

void check_delta_sq(double delta_sq) {
  if (!std::isfinite(delta_sq) || delta_sq < 0.0) {
    throw InvalidInput("sensitivity samples must be finite and nonnegative");
  }
}

}  // namespace

std::vector<double> mc_sensitivity(const HazardModel& model, const Batch& batch,
                                   const BatchGradients& batch_grads, const Batch& pool,
                                   int samples, double clip_norm, Rng& rng,
                                   const std::vector<bool>* excluded) {
  if (samples < 1) throw InvalidInput("mc_sensitivity needs at least one sample");
  const Eigen::Index pool_size = pool.size();
  if (pool_size == 0) throw InvalidInput("replacement pool is empty");
  if (excluded != nullptr &&
      std::count(excluded->begin(), excluded->end(), false) == 0) {
    throw InvalidInput("replacement pool is empty after excluding the batch");
  }
  const Eigen::Index L = batch.size();

  std::uniform_int_distribution<Eigen::Index> pick_slot(0, L - 1);
  std::uniform_int_distribution<Eigen::Index> pick_pool(0, pool_size - 1);
  std::vector<Eigen::Index> slots(static_cast<std::size_t>(samples));
  std::vector<Eigen::Index> draws(static_cast<std::size_t>(samples));
  for (int m = 0; m < samples; ++m) {
    slots[static_cast<std::size_t>(m)] = pick_slot(rng);
    Eigen::Index p = pick_pool(rng);
    while (excluded != nullptr && (*excluded)[static_cast<std::size_t>(p)]) p = pick_pool(rng);
    draws[static_cast<std::size_t>(m)] = p;
  }

  // All replacement candidates go through one batch pass.
  Batch replacements{Eigen::MatrixXd(samples, pool.x.cols()),
                     Eigen::MatrixXd(samples, pool.s_surv.cols()),
                     Eigen::MatrixXd(samples, pool.s_fail.cols())};
  for (int m = 0; m < samples; ++m) {
    const Eigen::Index p = draws[static_cast<std::size_t>(m)];
    replacements.x.row(m) = pool.x.row(p);
    replacements.s_surv.row(m) = pool.s_surv.row(p);
    replacements.s_fail.row(m) = pool.s_fail.row(p);
  }
  BatchGradients replacement_grads(model, replacements);

  std::vector<Eigen::VectorXd> clipped_slot(static_cast<std::size_t>(L));
  std::vector<double> out(static_cast<std::size_t>(samples));
  for (int m = 0; m < samples; ++m) {
    const auto slot = static_cast<std::size_t>(slots[static_cast<std::size_t>(m)]);
    if (clipped_slot[slot].size() == 0) {
      clipped_slot[slot] =
          clip_gradient(batch_grads.per_sample(static_cast<Eigen::Index>(slot)), clip_norm);
    }
    const Eigen::VectorXd replacement = clip_gradient(replacement_grads.per_sample(m), clip_norm);
    out[static_cast<std::size_t>(m)] =
        (clipped_slot[slot] - replacement).squaredNorm() / static_cast<double>(L * L);
  }
  return out;
}

std::vector<double> mc_sensitivity(const HazardModel& model, const Batch& batch,
                                   const Batch& pool, int samples, double clip_norm,
                                   Rng& rng) {
  BatchGradients grads(model, batch);
  return mc_sensitivity(model, batch, grads, pool, samples, clip_norm, rng);
}

double bdp_left_cost(double delta_sq, int lambda, double q, double sigma) {
  check_delta_sq(delta_sq);
  return log_binomial_moment(lambda + 1, q, delta_sq / (2.0 * sigma * sigma), -1);
}

double bdp_right_cost(double delta_sq, int lambda, double q, double sigma) {
  check_delta_sq(delta_sq);
  return log_binomial_moment(lambda, q, delta_sq / (2.0 * sigma * sigma), +1);
}

double ucb_log_moment(const std::vector<double>& costs, double gamma) {
  if (costs.empty()) throw InvalidInput("no Monte-Carlo cost samples");
  const double c_max = *std::max_element(costs.begin(), costs.end());
  const auto M = static_cast<double>(costs.size());
  if (costs.size() == 1) return c_max;

  // Moments exp(c) are handled relative to exp(c_max) to avoid overflow.
  double mean = 0.0;
  for (double c : costs) mean += std::exp(c - c_max);
  mean /= M;
  double ss = 0.0;
  for (double c : costs) {
    const double d = std::exp(c - c_max) - mean;
    ss += d * d;
  }
  const double sd = std::sqrt(ss / (M - 1.0));
  double bound = mean;
  if (sd > 0.0) {
    const boost::math::students_t dist(M - 1.0);
    bound += boost::math::quantile(dist, 1.0 - gamma) * sd / std::sqrt(M);
  }
  double ucb = c_max + std::log(bound);
  if (costs.size() < 5) ucb = std::max(ucb, c_max);
  return ucb;
}

double bdp_step_cost(const std::vector<double>& delta_sq, int lambda, double q, double sigma,
                     double gamma) {
  if (lambda < 1) throw InvalidInput("Renyi order must be a positive integer");
  if (!(sigma > 0.0)) throw InvalidInput("noise multiplier must be positive");
  if (!(q >= 0.0 && q <= 1.0)) throw InvalidInput("subsample rate must lie in [0,1]");
  if (!(gamma > 0.0 && gamma < 1.0)) throw InvalidInput("gamma must lie in (0,1)");
  std::vector<double> per_sample;
  per_sample.reserve(delta_sq.size());
  for (double d : delta_sq) {
    per_sample.push_back(std::max(bdp_left_cost(d, lambda, q, sigma),
                                  bdp_right_cost(d, lambda, q, sigma)));
  }
  return ucb_log_moment(per_sample, gamma);
}

BdpLedger::BdpLedger(std::vector<int> orders) : orders_(std::move(orders)) {
  if (orders_.empty()) throw InvalidInput("BDP ledger needs at least one order");
  costs_.assign(orders_.size(), 0.0);
}

void BdpLedger::add(const std::vector<double>& per_order_cost) {
  if (per_order_cost.size() != orders_.size()) throw DimensionMismatch("one cost per order");
  for (std::size_t i = 0; i < costs_.size(); ++i) costs_[i] += per_order_cost[i];
  ++steps_;
}

void BdpLedger::add(const BdpLedger& other) {
  if (other.orders_ != orders_) throw DimensionMismatch("BDP ledgers use different orders");
  for (std::size_t i = 0; i < costs_.size(); ++i) costs_[i] += other.costs_[i];
  steps_ += other.steps_;
}

PrivacySpend bdp_finalize(const BdpLedger& ledger, double beta, double gamma) {
  if (!(beta > 0.0 && beta < 1.0)) throw InvalidInput("beta must lie in (0,1)");
  const auto& orders = ledger.orders();
  if (orders.empty()) throw InvalidInput("empty order grid");
  PrivacySpend best{std::numeric_limits<double>::infinity(), beta + gamma, Regime::kBayesian, 0};
  const double log_beta = std::log(beta);
  for (std::size_t i = 0; i < orders.size(); ++i) {
    const double eps = (ledger.costs()[i] - log_beta) / orders[i];
    if (eps < best.epsilon) {
      best.epsilon = eps;
      best.order = orders[i];
    }
  }
  return best;
}

}  // namespace fsl
