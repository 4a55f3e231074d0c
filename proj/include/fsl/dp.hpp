#pragma once

// Gradient sanitization and the two privacy accountants.
//
// Classical: the subsampled Gaussian mechanism is tracked in Renyi-DP at
// integer orders using the exact binomial expansion of the order-alpha
// moment, composed additively, then converted to (epsilon, delta).
//
// Bayesian: the per-step sensitivity is estimated by Monte-Carlo
// replacement of one batch element, the resulting squared gradient
// deviations are turned into left/right binomial moment costs, bounded from
// above with a (1 - gamma) confidence bound, and accumulated per order.

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "fsl/rng.hpp"
#include "fsl/survival.hpp"

namespace fsl {

enum class Regime { kNone, kClassical, kBayesian };

std::string to_string(Regime regime);
Regime parse_regime(const std::string& name);

struct DpConfig {
  double clip_norm = 1.0;
  double noise_multiplier = 1.0;
  double delta = 1e-5;
  std::vector<double> target_epsilons{0.5, 1.0, 2.0, 10.0};

  // Throws ConfigError. sigma == 0 is tolerated only when allow_zero_noise.
  void validate(bool allow_zero_noise = false) const;
};

std::vector<int> default_rdp_orders();  // 2..64
std::vector<int> default_bdp_orders();  // 2, 4, 8, 16, 32

struct BdpConfig {
  std::vector<int> orders = default_bdp_orders();
  double beta = 5e-6;
  double gamma = 5e-6;
  int mc_samples = 10;

  void validate() const;
};

struct PrivacySpend {
  double epsilon = 0.0;
  double delta = 0.0;
  Regime regime = Regime::kNone;
  int order = 0;  // minimizing Renyi order; 0 when no accounting happened
};

// g / max(1, ||g|| / C).
Eigen::VectorXd clip_gradient(const Eigen::VectorXd& g, double clip_norm);

// Mean of clipped per-sample gradients plus N(0, (sigma C / L)^2) per
// coordinate, L = batch size.
Eigen::VectorXd sanitize_batch(const std::vector<Eigen::VectorXd>& per_sample_grads,
                               double clip_norm, double noise_multiplier, Rng& rng);

// Same mechanism evaluated directly from a batch pass, without materializing
// the per-sample gradients.
Eigen::VectorXd sanitize_batch(const BatchGradients& grads, double clip_norm,
                               double noise_multiplier, Rng& rng);

// Mean of clipped per-sample gradients, no noise.
Eigen::VectorXd clipped_mean(const BatchGradients& grads, double clip_norm);

void add_gaussian_noise(Eigen::VectorXd& g, double stddev, Rng& rng);

// ---------------------------------------------------------------------------
// Classical Renyi-DP accounting.

// RDP of one step of the Poisson-subsampled Gaussian mechanism at integer
// order alpha: log(sum_k C(alpha,k) (1-q)^(alpha-k) q^k exp((k^2-k)/(2 sigma^2))) / (alpha-1).
double rdp_step_cost(double q, double noise_multiplier, int alpha);

class RdpLedger {
 public:
  explicit RdpLedger(std::vector<int> orders = default_rdp_orders());

  // Compose `steps` identical steps.
  void add_steps(double q, double noise_multiplier, long steps = 1);
  void add(const RdpLedger& other);

  const std::vector<int>& orders() const { return orders_; }
  const std::vector<double>& costs() const { return costs_; }
  std::vector<double>& mutable_costs() { return costs_; }
  long steps() const { return steps_; }

 private:
  std::vector<int> orders_;
  std::vector<double> costs_;
  long steps_ = 0;
};

// epsilon = min_alpha [eps_alpha + log(1/delta) / (alpha - 1)].
PrivacySpend rdp_to_dp(const RdpLedger& ledger, double delta);

struct SigmaSearch {
  double lower = 0.3;
  double upper = 100.0;
  double relative_slack = 0.01;
};

// Smallest-noise sigma in the bracket whose composed epsilon after
// total_steps lies in [(1 - slack) * target, target]. When even the bracket
// minimum satisfies the target, the minimum is returned. Throws
// CalibrationFailure when the bracket maximum cannot reach the target.
double calibrate_sigma(double target_epsilon, double delta, double q, long total_steps,
                       const std::vector<int>& orders = default_rdp_orders(),
                       const SigmaSearch& search = {});

// ---------------------------------------------------------------------------
// Bayesian-DP accounting.

// Squared deviations ||g - g^(m)||^2 of the clipped averaged batch gradient
// when one uniformly chosen batch element is replaced by a uniform draw from
// `pool`. Pool rows flagged in `excluded` (if given) are never drawn.
std::vector<double> mc_sensitivity(const HazardModel& model, const Batch& batch,
                                   const BatchGradients& batch_grads, const Batch& pool,
                                   int samples, double clip_norm, Rng& rng,
                                   const std::vector<bool>* excluded = nullptr);

// Convenience overload that runs the batch pass itself.
std::vector<double> mc_sensitivity(const HazardModel& model, const Batch& batch,
                                   const Batch& pool, int samples, double clip_norm,
                                   Rng& rng);

// log E_{K~Bin(lambda+1,q)} exp((K^2-K) delta_sq / (2 sigma^2)).
double bdp_left_cost(double delta_sq, int lambda, double q, double sigma);
// log E_{K~Bin(lambda,q)} exp((K^2+K) delta_sq / (2 sigma^2)).
double bdp_right_cost(double delta_sq, int lambda, double q, double sigma);

// Upper (1 - gamma) confidence bound on log E[exp(c)] from samples of c.
double ucb_log_moment(const std::vector<double>& costs, double gamma);

// One step's cost at order lambda. `delta_sq` must be expressed in units in
// which the injected noise has standard deviation `sigma`.
double bdp_step_cost(const std::vector<double>& delta_sq, int lambda, double q, double sigma,
                     double gamma);

class BdpLedger {
 public:
  explicit BdpLedger(std::vector<int> orders = default_bdp_orders());

  void add(const std::vector<double>& per_order_cost);
  void add(const BdpLedger& other);

  const std::vector<int>& orders() const { return orders_; }
  const std::vector<double>& costs() const { return costs_; }
  std::vector<double>& mutable_costs() { return costs_; }
  long steps() const { return steps_; }

 private:
  std::vector<int> orders_;
  std::vector<double> costs_;
  long steps_ = 0;
};

// eps_mu(lambda) = (C_tot(lambda) - log beta) / lambda, minimized over the
// orders; delta_mu = beta + gamma.
PrivacySpend bdp_finalize(const BdpLedger& ledger, double beta, double gamma);

}  // namespace fsl
