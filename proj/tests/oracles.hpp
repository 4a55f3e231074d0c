#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance binary. Nothing here calls into the library routine it checks.

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <random>
#include <vector>

#include "fsl/survival.hpp"

namespace oracle {

inline fsl::HazardModel random_model(std::mt19937_64& rng, int d, std::vector<int> hidden, int T,
                                     double scale = 0.5) {
  std::vector<int> dims{d};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(T);
  fsl::HazardModel m(dims);
  std::normal_distribution<double> n(0.0, scale);
  for (Eigen::Index i = 0; i < m.num_parameters(); ++i) m.mutable_parameters()(i) = n(rng);
  return m;
}

// Plain loops over the flat parameter vector: per layer an out x in
// column-major weight block followed by the bias.
inline std::vector<double> forward(const fsl::HazardModel& model, const std::vector<double>& x) {
  const auto& dims = model.layer_dims();
  const Eigen::VectorXd& p = model.parameters();
  std::vector<double> a = x;
  long off = 0;
  const double alpha = 1.6732632423543772848170429916717;
  const double scale = 1.0507009873554804934193349852946;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const int in = dims[l];
    const int out = dims[l + 1];
    std::vector<double> z(static_cast<std::size_t>(out), 0.0);
    for (int r = 0; r < out; ++r) {
      double s = p(off + static_cast<long>(in) * out + r);
      for (int c = 0; c < in; ++c) s += p(off + static_cast<long>(c) * out + r) * a[c];
      z[r] = s;
    }
    off += static_cast<long>(in) * out + out;
    const bool last = l + 2 == dims.size();
    for (double& v : z) {
      if (last) {
        v = 1.0 / (1.0 + std::exp(-v));
      } else if (model.activation() == fsl::Activation::kSelu) {
        v = v > 0 ? scale * v : scale * alpha * (std::exp(v) - 1.0);
      } else {
        v = std::tanh(v);
      }
    }
    a = z;
  }
  return a;
}

// Likelihood of (t, delta) written as a product over intervals: an event in
// interval j contributes h_j prod_{l<j} (1 - h_l); a censored subject
// contributes (1 - h_l) for every interval whose midpoint it outlived.
inline double product_likelihood(const std::vector<double>& h, double t, int delta,
                                 const std::vector<double>& tau) {
  const int T = static_cast<int>(h.size());
  double lik = 1.0;
  if (delta == 1 && t <= tau[T]) {
    int j = T;
    for (int l = 1; l <= T; ++l) {
      if (tau[l - 1] <= t && t < tau[l]) {
        j = l;
        break;
      }
    }
    for (int l = 1; l < j; ++l) lik *= 1.0 - h[l - 1];
    return lik * h[j - 1];
  }
  const double tc = std::min(t, tau[T]);
  for (int l = 1; l <= T; ++l) {
    if (tc >= 0.5 * (tau[l - 1] + tau[l])) lik *= 1.0 - h[l - 1];
  }
  return lik;
}

// Five-point central difference of the record's loss in every parameter.
inline Eigen::VectorXd fd_gradient(fsl::HazardModel model, const Eigen::VectorXd& x,
                                   const fsl::DiscretizedTarget& target, double step = 1e-4) {
  Eigen::VectorXd g(model.num_parameters());
  auto loss = [&]() { return fsl::nll_loss(model.forward(x), target); };
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    const double p0 = model.parameters()(i);
    double f[4];
    const double offs[4] = {-2, -1, 1, 2};
    for (int k = 0; k < 4; ++k) {
      model.mutable_parameters()(i) = p0 + offs[k] * step;
      f[k] = loss();
    }
    model.mutable_parameters()(i) = p0;
    g(i) = (f[0] - 8 * f[1] + 8 * f[2] - f[3]) / (12 * step);
  }
  return g;
}

// Every ordered pair checked explicitly. survival(i, l) is S_{l+1}(x_i);
// S(t|x) is read at the number of grid intervals completed by t.
inline std::optional<double> brute_c_index(const Eigen::MatrixXd& survival,
                                           const std::vector<double>& tau,
                                           const std::vector<double>& times,
                                           const std::vector<int>& events, double horizon) {
  auto s_at = [&](std::size_t subj, double t) {
    int l = 0;
    for (std::size_t k = 1; k < tau.size(); ++k) {
      if (tau[k] <= t) l = static_cast<int>(k);
    }
    return l == 0 ? 1.0 : survival(static_cast<Eigen::Index>(subj), l - 1);
  };
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (events[i] != 1 || times[i] > horizon) continue;
    for (std::size_t j = 0; j < times.size(); ++j) {
      if (!(times[j] > times[i])) continue;
      den += 1.0;
      const double si = s_at(i, times[i]);
      const double sj = s_at(j, times[i]);
      if (si < sj) num += 1.0;
      else if (si == sj) num += 0.5;
    }
  }
  if (den == 0.0) return std::nullopt;
  return num / den;
}

// Integer-order RDP of the subsampled Gaussian by the binomial sum in long
// double, no log-space tricks.
inline long double rdp_direct(long double q, long double sigma, int alpha) {
  long double sum = 0.0L;
  long double binom = 1.0L;
  for (int k = 0; k <= alpha; ++k) {
    if (k > 0) binom = binom * (alpha - k + 1) / k;
    const long double kk = k;
    sum += binom * std::pow(1.0L - q, static_cast<long double>(alpha - k)) *
           std::pow(q, kk) * std::exp((kk * kk - kk) / (2.0L * sigma * sigma));
  }
  return std::log(sum) / (alpha - 1);
}

inline double rdp_epsilon_direct(double q, double sigma, long steps, double delta,
                                 int max_order = 64) {
  long double best = INFINITY;
  for (int a = 2; a <= max_order; ++a) {
    const long double e = steps * rdp_direct(q, sigma, a) + std::log(1.0L / delta) / (a - 1);
    if (e < best) best = e;
  }
  return static_cast<double>(best);
}

}  // namespace oracle
