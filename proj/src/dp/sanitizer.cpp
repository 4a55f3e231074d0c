#include <algorithm>
#include <cmath>

#include "fsl/dp.hpp"
#include "fsl/errors.hpp"

namespace fsl {

std::string to_string(Regime regime) {
  switch (regime) {
    case Regime::kNone:
      return "none";
    case Regime::kClassical:
      return "classical";
    case Regime::kBayesian:
      return "bayesian";
  }
  return "none";
}

Regime parse_regime(const std::string& name) {
  if (name == "none") return Regime::kNone;
  if (name == "classical") return Regime::kClassical;
  if (name == "bayesian") return Regime::kBayesian;
  throw ConfigError("unknown privacy regime '" + name + "'");
}

void DpConfig::validate(bool allow_zero_noise) const {
  if (!(clip_norm > 0.0)) throw ConfigError("dp.clip_norm must be positive");
  if (allow_zero_noise ? !(noise_multiplier >= 0.0) : !(noise_multiplier > 0.0)) {
    throw ConfigError("dp.noise_multiplier must be positive");
  }
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("dp.delta must lie in (0,1)");
  for (double e : target_epsilons) {
    if (!(e > 0.0)) throw ConfigError("dp.target_epsilons must be positive");
  }
}

std::vector<int> default_rdp_orders() {
  std::vector<int> orders;
  for (int a = 2; a <= 64; ++a) orders.push_back(a);
  return orders;
}

std::vector<int> default_bdp_orders() { return {2, 4, 8, 16, 32}; }

void BdpConfig::validate() const {
  if (orders.empty()) throw ConfigError("bdp.orders must be nonempty");
  for (int l : orders) {
    if (l < 2) throw ConfigError("bdp.orders must be integers >= 2");
  }
  if (!(beta > 0.0 && beta < 1.0)) throw ConfigError("bdp.beta must lie in (0,1)");
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("bdp.gamma must lie in (0,1)");
  if (!(beta + gamma < 1.0)) throw ConfigError("bdp.beta + bdp.gamma must be < 1");
  if (mc_samples < 2) throw ConfigError("bdp.mc_samples must be >= 2");
}

Eigen::VectorXd clip_gradient(const Eigen::VectorXd& g, double clip_norm) {
  const double norm = g.norm();
  return g / std::max(1.0, norm / clip_norm);
}

void add_gaussian_noise(Eigen::VectorXd& g, double stddev, Rng& rng) {
  if (stddev == 0.0) return;
  std::normal_distribution<double> normal(0.0, stddev);
  for (Eigen::Index i = 0; i < g.size(); ++i) g(i) += normal(rng);
}

Eigen::VectorXd sanitize_batch(const std::vector<Eigen::VectorXd>& per_sample_grads,
                               double clip_norm, double noise_multiplier, Rng& rng) {
  if (per_sample_grads.empty()) throw InvalidInput("sanitize_batch needs a nonempty batch");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(per_sample_grads.front().size());
  for (const auto& g : per_sample_grads) sum += clip_gradient(g, clip_norm);
  const auto L = static_cast<double>(per_sample_grads.size());
  Eigen::VectorXd out = sum / L;
  add_gaussian_noise(out, noise_multiplier * clip_norm / L, rng);
  return out;
}

Eigen::VectorXd clipped_mean(const BatchGradients& grads, double clip_norm) {
  const Eigen::VectorXd norms = grads.squared_norms().cwiseSqrt();
  const Eigen::VectorXd factors =
      norms.unaryExpr([clip_norm](double n) { return 1.0 / std::max(1.0, n / clip_norm); });
  return grads.weighted_sum(factors) / static_cast<double>(grads.size());
}

Eigen::VectorXd sanitize_batch(const BatchGradients& grads, double clip_norm,
                               double noise_multiplier, Rng& rng) {
  Eigen::VectorXd out = clipped_mean(grads, clip_norm);
  add_gaussian_noise(out, noise_multiplier * clip_norm / static_cast<double>(grads.size()), rng);
  return out;
}

}  // namespace fsl
