#include <cmath>
#include <random>

#include "doctest.h"
#include "fsl/dp.hpp"
#include "fsl/errors.hpp"
#include "oracles.hpp"

using namespace fsl;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

}  // namespace

TEST_CASE("clip_gradient") {
  CHECK(clip_gradient(vec({0.3, 0.4}), 1.0) == vec({0.3, 0.4}));
  const auto c = clip_gradient(vec({3, 4}), 1.0);
  CHECK(c(0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(c(1) == doctest::Approx(0.8).epsilon(1e-15));
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int i = 0; i < 500; ++i) {
    Eigen::VectorXd g(7);
    for (Eigen::Index k = 0; k < 7; ++k) g(k) = n(rng);
    const double C = 0.1 + (i % 10) * 0.5;
    const auto out = clip_gradient(g, C);
    CHECK(out.norm() <= C + 1e-12);
    CHECK(out.dot(g) >= 0.0);
  }
}

TEST_CASE("sanitize_batch") {
  std::vector<Eigen::VectorXd> same(4, vec({0.2, -0.1, 0.3}));
  Rng rng(1);
  CHECK(sanitize_batch(same, 1.0, 0.0, rng) == same[0]);

  std::vector<Eigen::VectorXd> grads{vec({3, 4, 0}), vec({0, 0, 0.5})};
  const auto mean = sanitize_batch(grads, 1.0, 0.0, rng);
  CHECK(mean(0) == doctest::Approx(0.3));
  CHECK(mean(2) == doctest::Approx(0.25));

  Rng a(99), b(99);
  CHECK(sanitize_batch(grads, 1.0, 1.0, a) == sanitize_batch(grads, 1.0, 1.0, b));

  // Noise std is sigma C / L per coordinate.
  std::vector<Eigen::VectorXd> zeros(4, Eigen::VectorXd::Zero(20000));
  Rng r(5);
  const auto noisy = sanitize_batch(zeros, 2.0, 1.5, r);
  const double sd = std::sqrt(noisy.squaredNorm() / noisy.size());
  CHECK(sd == doctest::Approx(1.5 * 2.0 / 4.0).epsilon(0.02));
  CHECK_THROWS_AS(sanitize_batch({}, 1.0, 1.0, r), InvalidInput);
}

TEST_CASE("rdp_step_cost limits and direct-sum oracle") {
  for (int a : {2, 5, 32}) {
    CHECK(rdp_step_cost(1.0, 1.7, a) == doctest::Approx(a / (2 * 1.7 * 1.7)).epsilon(1e-15));
    CHECK(rdp_step_cost(0.0, 1.7, a) == 0.0);
  }
  for (double q : {0.001, 0.01, 0.1, 0.5}) {
    for (double s : {0.7, 1.0, 3.0}) {
      for (int a : {2, 3, 8, 20, 64}) {
        const double want = static_cast<double>(oracle::rdp_direct(q, s, a));
        CHECK(rdp_step_cost(q, s, a) == doctest::Approx(want).epsilon(1e-10));
      }
    }
  }
  CHECK_THROWS_AS(rdp_step_cost(0.1, 0.0, 2), InvalidInput);
  CHECK_THROWS_AS(rdp_step_cost(1.5, 1.0, 2), InvalidInput);
  CHECK_THROWS_AS(rdp_step_cost(0.1, 1.0, 1), InvalidInput);
}

TEST_CASE("rdp_step_cost small-q band") {
  // Leading behaviour is alpha q^2 (e^{1/sigma^2} - 1) / 2; the bare
  // alpha q^2 / (2 sigma^2) is its large-sigma limit.
  for (double s : {2.0, 4.0, 8.0}) {
    for (int a = 2; a <= 8; ++a) {
      for (double q : {1e-4, 1e-3, 0.01, 0.03, 0.05}) {
        const double lead = a * q * q * std::expm1(1.0 / (s * s)) / 2.0;
        const double cost = rdp_step_cost(q, s, a);
        CHECK(cost <= lead + 5.0 * q * q * q);
        CHECK(cost >= a * q * q / (2 * s * s) * (1 - 2 * q));
      }
    }
  }
  const double q = 1e-3;
  const double ratio = rdp_step_cost(q, 30.0, 4) / (4 * q * q / (2 * 900.0));
  CHECK(ratio == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("rdp_to_dp worked examples") {
  RdpLedger zero;
  const auto e = rdp_to_dp(zero, 1e-5);
  CHECK(e.epsilon == doctest::Approx(std::log(1e5) / 63).epsilon(1e-14));
  CHECK(e.order == 64);

  RdpLedger one({2});
  one.mutable_costs()[0] = 1.0;
  CHECK(rdp_to_dp(one, 1e-5).epsilon == doctest::Approx(1 + std::log(1e5)).epsilon(1e-14));

  RdpLedger l;
  l.add_steps(0.01, 1.0, 1000);
  CHECK(std::abs(rdp_to_dp(l, 1e-5).epsilon - oracle::rdp_epsilon_direct(0.01, 1.0, 1000, 1e-5)) <
        1e-6);
  CHECK_THROWS_AS(rdp_to_dp(l, 0.0), InvalidInput);
}

TEST_CASE("rdp ledger composition is additive and monotone") {
  RdpLedger a, b, both;
  a.add_steps(0.02, 1.3, 300);
  b.add_steps(0.02, 1.3, 700);
  both.add_steps(0.02, 1.3, 1000);
  RdpLedger sum = a;
  sum.add(b);
  for (std::size_t k = 0; k < sum.costs().size(); ++k) {
    CHECK(sum.costs()[k] == doctest::Approx(both.costs()[k]).epsilon(1e-14));
  }
  CHECK(sum.steps() == 1000);

  RdpLedger twice;
  twice.add_steps(0.02, 1.3, 1);
  twice.add_steps(0.02, 1.3, 1);
  RdpLedger two;
  two.add_steps(0.02, 1.3, 2);
  for (std::size_t k = 0; k < two.costs().size(); ++k) CHECK(twice.costs()[k] == two.costs()[k]);

  double prev = rdp_to_dp(a, 1e-5).epsilon;
  RdpLedger grow = a;
  for (std::size_t k = 0; k < grow.costs().size(); ++k) {
    grow.mutable_costs()[k] += 0.1;
    const double e = rdp_to_dp(grow, 1e-5).epsilon;
    CHECK(e >= prev);
    prev = e;
  }
  CHECK_THROWS_AS(RdpLedger({1}), InvalidInput);
  CHECK_THROWS_AS(a.add(RdpLedger({2, 3})), DimensionMismatch);
}

TEST_CASE("calibrate_sigma round trip and monotonicity") {
  const double q = 32.0 / 4000.0;
  const long steps = 10 * 5 * 125;
  double prev = INFINITY;
  for (double target : {0.5, 1.0, 2.0, 10.0}) {
    const double s = calibrate_sigma(target, 1e-5, q, steps);
    RdpLedger l;
    l.add_steps(q, s, steps);
    const double got = rdp_to_dp(l, 1e-5).epsilon;
    CHECK(got <= target);
    CHECK(got >= 0.99 * target);
    CHECK(s < prev);
    prev = s;
  }
  // Vanishing sampling rate drives sigma down toward the bracket minimum.
  double last = INFINITY;
  for (double qq : {1e-2, 1e-3, 1e-5, 1e-8}) {
    const double s = calibrate_sigma(1.0, 1e-5, qq, 100);
    CHECK(s < last);
    last = s;
  }
  CHECK(calibrate_sigma(20.0, 1e-5, 1e-8, 1) == 0.3);
  CHECK_THROWS_AS(calibrate_sigma(1e-4, 1e-5, 1.0, 100000), CalibrationFailure);
  CHECK_THROWS_AS(calibrate_sigma(0.0, 1e-5, 0.1, 10), InvalidInput);
}

TEST_CASE("mc_sensitivity") {
  // Batch of one record, pool of two; grads known in closed form for a
  // zero-parameter single-layer model: d loss / d bias = h - s_fail.
  HazardModel m({1, 1});
  Batch batch{Eigen::MatrixXd::Zero(1, 1), Eigen::MatrixXd::Ones(1, 1),
              Eigen::MatrixXd::Zero(1, 1)};
  Batch pool{Eigen::MatrixXd::Zero(2, 1), Eigen::MatrixXd(2, 1), Eigen::MatrixXd(2, 1)};
  pool.s_surv << 1, 0;
  pool.s_fail << 0, 1;
  Rng rng(3);
  // Batch grad (w, b) = (0, 0.5); pool grads (0, 0.5) and (0, -0.5).
  const auto d = mc_sensitivity(m, batch, pool, 50, 10.0, rng);
  for (double v : d) CHECK((v == 0.0 || v == doctest::Approx(1.0).epsilon(1e-15)));
  // Clipping to 0.2 caps the distance at 0.4.
  const auto dc = mc_sensitivity(m, batch, pool, 50, 0.2, rng);
  for (double v : dc) CHECK((v == 0.0 || v == doctest::Approx(0.16).epsilon(1e-14)));

  // Excluding the pool row identical to the batch leaves only the other one.
  BatchGradients bg(m, batch);
  std::vector<bool> excl{true, false};
  const auto only = mc_sensitivity(m, batch, bg, pool, 20, 10.0, rng, &excl);
  for (double v : only) CHECK(v == doctest::Approx(1.0).epsilon(1e-15));

  // Random model and data: every draw respects (2C/L)^2.
  std::mt19937_64 g(4);
  std::normal_distribution<double> n(0.0, 1.0);
  const auto rm = oracle::random_model(g, 3, {5}, 2, 1.0);
  Batch b8{Eigen::MatrixXd(8, 3), Eigen::MatrixXd::Zero(8, 2), Eigen::MatrixXd::Zero(8, 2)};
  Batch p{Eigen::MatrixXd(30, 3), Eigen::MatrixXd::Zero(30, 2), Eigen::MatrixXd::Zero(30, 2)};
  for (Eigen::Index i = 0; i < 8; ++i) {
    for (int k = 0; k < 3; ++k) b8.x(i, k) = 3 * n(g);
    b8.s_fail(i, i % 2) = 1.0;
  }
  for (Eigen::Index i = 0; i < 30; ++i) {
    for (int k = 0; k < 3; ++k) p.x(i, k) = 3 * n(g);
    p.s_surv(i, 0) = 1.0;
  }
  const double C = 0.5;
  for (double v : mc_sensitivity(rm, b8, p, 200, C, rng)) {
    CHECK(v <= std::pow(2 * C / 8, 2) + 1e-12);
  }
  Rng s1(8), s2(8);
  CHECK(mc_sensitivity(rm, b8, p, 10, C, s1) == mc_sensitivity(rm, b8, p, 10, C, s2));
  CHECK_THROWS_AS(mc_sensitivity(rm, b8, p, 0, C, s1), InvalidInput);
  std::vector<bool> all(30, true);
  CHECK_THROWS_AS(mc_sensitivity(rm, b8, BatchGradients(rm, b8), p, 5, C, s1, &all),
                  InvalidInput);
}

TEST_CASE("bdp step cost") {
  CHECK(bdp_step_cost({0, 0, 0, 0}, 8, 0.05, 1.0, 5e-6) == 0.0);

  // lambda = 1: K ~ Bin(2, q), (K^2 - K)/2 in {0, 0, 1}.
  const double q = 0.3, s = 1.2, d = 0.7;
  const double left = std::log((1 - q) * (1 - q) + 2 * q * (1 - q) + q * q * std::exp(d / (s * s)));
  CHECK(bdp_left_cost(d, 1, q, s) == doctest::Approx(left).epsilon(1e-14));
  // Right at lambda = 1: K ~ Bin(1, q), (K^2 + K)/2 in {0, 1}.
  const double right = std::log((1 - q) + q * std::exp(d / (s * s)));
  CHECK(bdp_right_cost(d, 1, q, s) == doctest::Approx(right).epsilon(1e-14));
  CHECK(bdp_step_cost({d}, 1, q, s, 0.01) == doctest::Approx(std::max(left, right)));

  // Monotone in sigma (decreasing) and in delta (increasing).
  const std::vector<double> prof{0.3, 0.5, 0.8, 0.4};
  double prev = INFINITY;
  for (int i = 0; i < 10; ++i) {
    const double c = bdp_step_cost(prof, 8, 0.05, 0.8 + 0.3 * i, 5e-6);
    CHECK(c < prev);
    prev = c;
  }
  prev = -INFINITY;
  for (int i = 0; i < 10; ++i) {
    std::vector<double> scaled;
    for (double v : prof) scaled.push_back(v * (1 + i));
    const double c = bdp_step_cost(scaled, 8, 0.05, 1.0, 5e-6);
    CHECK(c > prev);
    prev = c;
  }
  CHECK_THROWS_AS(bdp_step_cost({NAN}, 2, 0.1, 1.0, 0.1), InvalidInput);
  CHECK_THROWS_AS(bdp_step_cost({-1.0}, 2, 0.1, 1.0, 0.1), InvalidInput);
  CHECK_THROWS_AS(bdp_step_cost({1.0}, 0, 0.1, 1.0, 0.1), InvalidInput);
}

TEST_CASE("ucb in moment space") {
  // Constant samples: the bound is the constant.
  CHECK(ucb_log_moment({0.4, 0.4, 0.4, 0.4, 0.4, 0.4}, 1e-3) == doctest::Approx(0.4));
  // Hand evaluation for M = 5 with t_{0.95, 4} = 2.131846786326649.
  const std::vector<double> c{0.0, 0.1, 0.2, 0.3, 0.4};
  double mean = 0, ss = 0;
  for (double v : c) mean += std::exp(v) / 5;
  for (double v : c) ss += (std::exp(v) - mean) * (std::exp(v) - mean);
  const double want = std::log(mean + 2.131846786326649 * std::sqrt(ss / 4) / std::sqrt(5.0));
  CHECK(ucb_log_moment(c, 0.05) == doctest::Approx(want).epsilon(1e-12));
  // Fewer than five samples: never below the empirical max.
  CHECK(ucb_log_moment({0.0, 5.0}, 0.49) >= 5.0);
  CHECK_THROWS_AS(ucb_log_moment({}, 0.1), InvalidInput);
}

TEST_CASE("bdp ledger and finalization") {
  BdpLedger zero({2, 4, 8, 16, 32});
  const auto z = bdp_finalize(zero, 1e-5, 1e-5);
  CHECK(z.epsilon == doctest::Approx(std::log(1e5) / 32).epsilon(1e-14));
  CHECK(z.order == 32);
  CHECK(z.delta == doctest::Approx(2e-5));

  BdpLedger lin({2, 4, 8, 16, 32});
  lin.add({2, 4, 8, 16, 32});
  const auto l = bdp_finalize(lin, 1e-5, 1e-5);
  CHECK(l.epsilon == doctest::Approx(1 + std::log(1e5) / 32).epsilon(1e-14));

  // Additivity: many single steps equal their sum, exactly.
  BdpLedger steps({2, 4}), block({2, 4});
  for (int i = 0; i < 4; ++i) steps.add({0.25, 0.5});
  block.add({1.0, 2.0});
  CHECK(steps.costs() == block.costs());
  BdpLedger merged = steps;
  merged.add(block);
  CHECK(merged.costs()[1] == 4.0);
  CHECK(merged.steps() == 5);

  // Monotone in every entry.
  BdpLedger grow({2, 4, 8});
  double prev = bdp_finalize(grow, 1e-5, 1e-5).epsilon;
  for (int k = 0; k < 3; ++k) {
    grow.mutable_costs()[static_cast<std::size_t>(k)] += 3.0;
    const double e = bdp_finalize(grow, 1e-5, 1e-5).epsilon;
    CHECK(e >= prev);
    prev = e;
  }
  CHECK_THROWS_AS(steps.add({1.0}), DimensionMismatch);
}

TEST_CASE("bdp against classical at matched parameters") {
  const double q = 0.01, s = 1.1;
  const long T = 2000;
  RdpLedger cls;
  cls.add_steps(q, s, T);
  const double eps_c = rdp_to_dp(cls, 1e-5).epsilon;

  auto bdp_eps = [&](double d) {
    BdpLedger b;
    std::vector<double> step;
    for (int lam : b.orders()) step.push_back(bdp_step_cost(std::vector<double>(10, d), lam, q, s, 5e-6));
    for (long i = 0; i < T; ++i) b.add(step);
    return bdp_finalize(b, 5e-6, 5e-6).epsilon;
  };
  // Far below the worst case the data-dependent bound is tighter.
  CHECK(bdp_eps(0.04) < eps_c);
  // At the replacement worst case (noise units: (2C/L)^2 (L/C)^2 = 4) the
  // right-hand cost keeps a first-order term lambda q (e^{D/sigma^2} - 1), so
  // the per-step cost shrinks like q rather than q^2 and no constant factor
  // separates it from the classical bound.
  CHECK(bdp_eps(4.0) > eps_c);
  const double c1 = bdp_step_cost({4.0}, 2, 1e-5, s, 0.1);
  const double c2 = bdp_step_cost({4.0}, 2, 1e-6, s, 0.1);
  CHECK(c1 / c2 == doctest::Approx(10.0).epsilon(0.01));
  CHECK(rdp_step_cost(1e-5, s, 2) / rdp_step_cost(1e-6, s, 2) ==
        doctest::Approx(100.0).epsilon(0.01));
}
