#include <cmath>
#include <random>

#include "doctest.h"
#include "fsl/errors.hpp"
#include "fsl/federation.hpp"
#include "oracles.hpp"

using namespace fsl;

namespace {

std::vector<SurvivalRecord> make_records(std::mt19937_64& rng, int n, int d, double horizon,
                                         double signal = 1.0) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<SurvivalRecord> out;
  for (int i = 0; i < n; ++i) {
    SurvivalRecord r{Eigen::VectorXd(d), 0.0, 0};
    for (int k = 0; k < d; ++k) r.x(k) = normal(rng);
    // Larger x(0) means earlier events.
    const double rate = std::exp(signal * r.x(0)) / horizon;
    r.t = -std::log(1.0 - unit(rng)) / rate;
    r.delta = unit(rng) < 0.8 ? 1 : 0;
    out.push_back(r);
  }
  return out;
}

FederationConfig sgd_config(Regime regime = Regime::kNone) {
  FederationConfig c;
  c.rounds = 1;
  c.local_epochs = 1;
  c.optimizer = OptimizerKind::kSgd;
  c.learning_rate = 0.1;
  c.regime = regime;
  c.allow_degenerate = true;
  return c;
}

}  // namespace

TEST_CASE("sample_clients") {
  Rng rng(1);
  CHECK(sample_clients(5, 1.0, rng) == std::vector<int>{0, 1, 2, 3, 4});
  CHECK(sample_clients(10, 0.35, rng).size() == 3);
  CHECK(sample_clients(10, 0.01, rng).size() == 1);
  Rng a(7), b(7);
  CHECK(sample_clients(20, 0.4, a) == sample_clients(20, 0.4, b));
  const auto s = sample_clients(20, 0.4, a);
  CHECK(std::is_sorted(s.begin(), s.end()));
  CHECK(std::adjacent_find(s.begin(), s.end()) == s.end());
  CHECK_THROWS_AS(sample_clients(0, 1.0, rng), InvalidInput);
  CHECK_THROWS_AS(sample_clients(3, 0.0, rng), InvalidInput);
}

TEST_CASE("aggregate") {
  HazardModel p({2, 1});
  p.mutable_parameters() << 1.0, -2.0, 0.5;
  HazardModel neg = p;
  neg.mutable_parameters() *= -1.0;
  CHECK(aggregate({{p, 3.0}, {p, 5.0}}).parameters() == p.parameters());
  CHECK(aggregate({{p, 2.0}, {neg, 2.0}}).parameters().norm() == 0.0);

  std::vector<ModelUpdate> u;
  for (int k = 1; k <= 3; ++k) {
    HazardModel m({1, 1});
    m.mutable_parameters() << k, k;
    u.push_back({m, static_cast<double>(k)});
  }
  CHECK(aggregate(u).parameters()(0) == doctest::Approx(14.0 / 6.0).epsilon(1e-15));
  CHECK_THROWS_AS(aggregate({{p, 1.0}, {HazardModel({3, 1}), 1.0}}), DimensionMismatch);
  CHECK_THROWS_AS(aggregate({}), InvalidInput);
}

TEST_CASE("local_train without privacy equals full-batch gradient descent") {
  std::mt19937_64 rng(2);
  const TimeGrid grid = TimeGrid::uniform(3, 1.0);
  const auto recs = make_records(rng, 12, 2, 2.0);
  const auto model = oracle::random_model(rng, 2, {3}, 3);
  ClientState client(0, "c", recs, grid);
  FederationConfig cfg = sgd_config();
  cfg.batch_size = 12;
  const auto out = local_train(client, model, cfg, 0);

  // Oracle: finite-difference gradient of the mean loss, one step.
  Eigen::VectorXd g = Eigen::VectorXd::Zero(model.num_parameters());
  for (const auto& r : recs) g += oracle::fd_gradient(model, r.x, discretize(r, grid));
  g /= 12.0;
  const Eigen::VectorXd want = model.parameters() - 0.1 * g;
  CHECK((out.model.parameters() - want).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(out.steps == 1);
  CHECK(out.round_spend.epsilon == 0.0);
  CHECK(!client.rdp_ledger());
}

TEST_CASE("zero-noise classical training follows clipped descent") {
  std::mt19937_64 rng(3);
  const TimeGrid grid = TimeGrid::uniform(3, 1.0);
  const auto recs = make_records(rng, 10, 3, 2.0);
  const auto model = oracle::random_model(rng, 3, {4}, 3, 1.0);
  ClientState client(0, "c", recs, grid);
  FederationConfig cfg = sgd_config(Regime::kClassical);
  cfg.batch_size = 10;
  cfg.local_epochs = 3;
  cfg.dp.clip_norm = 0.3;
  cfg.dp.noise_multiplier = 0.0;
  const auto out = local_train(client, model, cfg, 0);

  HazardModel ref = model;
  std::vector<DiscretizedTarget> targets;
  for (const auto& r : recs) targets.push_back(discretize(r, grid));
  const Batch all = make_batch(recs, targets, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  for (int e = 0; e < 3; ++e) {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(ref.num_parameters());
    for (const auto& g : per_sample_gradients(ref, all)) {
      mean += g / std::max(1.0, g.norm() / 0.3);
    }
    ref.mutable_parameters() -= 0.1 * mean / 10.0;
  }
  CHECK((out.model.parameters() - ref.parameters()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(std::isinf(out.round_spend.epsilon));
}

TEST_CASE("zero local epochs leave the model and ledgers untouched") {
  std::mt19937_64 rng(4);
  const TimeGrid grid = TimeGrid::uniform(2, 1.0);
  ClientState client(0, "c", make_records(rng, 5, 2, 1.0), grid);
  const auto model = oracle::random_model(rng, 2, {}, 2);
  FederationConfig cfg = sgd_config(Regime::kClassical);
  cfg.local_epochs = 0;
  const auto out = local_train(client, model, cfg, 0);
  CHECK(out.model.parameters() == model.parameters());
  CHECK(out.round_spend.epsilon == 0.0);
  CHECK(out.steps == 0);
  CHECK(!client.rdp_ledger());
}

TEST_CASE("single client federation reduces to local training") {
  std::mt19937_64 rng(5);
  const TimeGrid grid = TimeGrid::uniform(3, 1.0);
  const auto recs = make_records(rng, 40, 2, 2.0);
  const auto model = oracle::random_model(rng, 2, {4}, 3);
  FederationConfig cfg = sgd_config(Regime::kClassical);
  cfg.batch_size = 8;
  cfg.dp.noise_multiplier = 1.0;

  ClientState a(0, "c", recs, grid);
  const auto local = local_train(a, model, cfg, 0);
  std::vector<ClientState> clients{ClientState(0, "c", recs, grid)};
  const auto fed = run_federated(clients, cfg, model);
  CHECK(fed.model.parameters() == local.model.parameters());
  CHECK(fed.rounds[0].weights == std::vector<double>{1.0});

  ClientState pooled(0, "c", recs, grid);
  cfg.rounds = 2;
  std::vector<ClientState> again{ClientState(0, "c", recs, grid)};
  const auto central = run_centralized(pooled, cfg, model);
  const auto fed2 = run_federated(again, cfg, model);
  CHECK(model_checksum(central.model) == model_checksum(fed2.model));
  CHECK(central.privacy[0].composed.epsilon == fed2.privacy[0].composed.epsilon);
}

TEST_CASE("identical shards with full batches match pooled training") {
  std::mt19937_64 rng(6);
  const TimeGrid grid = TimeGrid::uniform(3, 1.0);
  const auto shard = make_records(rng, 15, 2, 2.0);
  const auto model = oracle::random_model(rng, 2, {3}, 3);
  FederationConfig cfg = sgd_config();
  cfg.batch_size = 15;
  std::vector<ClientState> clients{ClientState(0, "a", shard, grid),
                                   ClientState(1, "b", shard, grid)};
  const auto fed = run_federated(clients, cfg, model);

  auto pooled_recs = shard;
  pooled_recs.insert(pooled_recs.end(), shard.begin(), shard.end());
  ClientState pooled(0, "p", pooled_recs, grid);
  FederationConfig pc = cfg;
  pc.batch_size = 30;
  const auto central = run_centralized(pooled, pc, model);
  CHECK((fed.model.parameters() - central.model.parameters()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("ledger composition across rounds is additive") {
  std::mt19937_64 rng(7);
  const TimeGrid grid = TimeGrid::uniform(3, 1.0);
  const auto recs = make_records(rng, 64, 2, 2.0);
  const auto model = oracle::random_model(rng, 2, {3}, 3);
  FederationConfig two = sgd_config(Regime::kClassical);
  two.batch_size = 16;
  two.rounds = 2;
  two.dp.noise_multiplier = 1.1;
  FederationConfig one = two;
  one.rounds = 1;
  one.local_epochs = 2;
  std::vector<ClientState> a{ClientState(0, "c", recs, grid)};
  std::vector<ClientState> b{ClientState(0, "c", recs, grid)};
  const auto ra = run_federated(a, two, model);
  const auto rb = run_federated(b, one, model);
  CHECK(ra.privacy[0].steps == rb.privacy[0].steps);
  for (std::size_t k = 0; k < ra.privacy[0].order_costs.size(); ++k) {
    CHECK(ra.privacy[0].order_costs[k] ==
          doctest::Approx(rb.privacy[0].order_costs[k]).epsilon(1e-14));
  }
  CHECK(ra.privacy[0].composed.epsilon == doctest::Approx(rb.privacy[0].composed.epsilon));
  // Linear sum over two rounds is at least the composed value.
  CHECK(ra.privacy[0].epsilon_linear >= ra.privacy[0].composed.epsilon);
  CHECK(ra.privacy[0].delta_linear == doctest::Approx(2 * two.dp.delta));
}

TEST_CASE("round reports: weights, monotone spend, non-participants unchanged") {
  std::mt19937_64 rng(8);
  const TimeGrid grid = TimeGrid::uniform(3, 1.0);
  std::vector<ClientState> clients;
  for (int k = 0; k < 4; ++k) {
    clients.emplace_back(k, "c" + std::to_string(k), make_records(rng, 30 + 10 * k, 2, 2.0), grid);
  }
  const auto model = oracle::random_model(rng, 2, {3}, 3);
  for (Regime regime : {Regime::kClassical, Regime::kBayesian}) {
    auto cs = clients;
    FederationConfig cfg = sgd_config(regime);
    cfg.rounds = 5;
    cfg.participation_rate = 0.5;
    cfg.batch_size = 10;
    cfg.fallback_threshold = 0;
    std::vector<double> last_eps(4, 0.0), last_linear(4, 0.0);
    const auto res = run_federated(cs, cfg, model);
    for (const auto& r : res.rounds) {
      double w = 0.0;
      for (double v : r.weights) w += v;
      CHECK(w == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(r.participants.size() == 2);
      for (std::size_t i = 0; i < r.participants.size(); ++i) {
        const auto k = static_cast<std::size_t>(r.participants[i]);
        CHECK(r.cumulative_spend[i].epsilon >= last_eps[k]);
        CHECK(r.epsilon_linear[i] >= last_linear[k]);
        last_eps[k] = r.cumulative_spend[i].epsilon;
        last_linear[k] = r.epsilon_linear[i];
      }
    }
    // Ledgers only move for clients that trained.
    for (std::size_t k = 0; k < 4; ++k) {
      int rounds_in = 0;
      for (const auto& r : res.rounds) {
        rounds_in += std::count(r.participants.begin(), r.participants.end(), static_cast<int>(k));
      }
      const long per_round = 1 * static_cast<long>(std::ceil((30 + 10 * k) / 10.0));
      CHECK(res.privacy[k].steps == rounds_in * per_round);
    }
  }
}

TEST_CASE("small clients fall back to classical accounting") {
  std::mt19937_64 rng(9);
  const TimeGrid grid = TimeGrid::uniform(2, 1.0);
  std::vector<ClientState> cs{ClientState(0, "small", make_records(rng, 50, 2, 1.0), grid),
                              ClientState(1, "large", make_records(rng, 120, 2, 1.0), grid)};
  const auto model = oracle::random_model(rng, 2, {}, 2);
  FederationConfig cfg = sgd_config(Regime::kBayesian);
  cfg.batch_size = 25;
  const auto res = run_federated(cs, cfg, model);
  CHECK(res.privacy[0].fallback);
  CHECK(res.privacy[0].accounting == Regime::kClassical);
  CHECK(res.privacy[0].orders.size() == default_rdp_orders().size());
  CHECK(!res.privacy[1].fallback);
  CHECK(res.privacy[1].accounting == Regime::kBayesian);
  CHECK(res.privacy[1].composed.delta == doctest::Approx(cfg.bdp.beta + cfg.bdp.gamma));
}

TEST_CASE("training is deterministic and independent of worker count") {
  std::mt19937_64 rng(10);
  const TimeGrid grid = TimeGrid::uniform(3, 1.0);
  std::vector<ClientState> clients;
  for (int k = 0; k < 3; ++k) clients.emplace_back(k, "c", make_records(rng, 60, 3, 2.0), grid);
  const auto model = oracle::random_model(rng, 3, {4}, 3);
  FederationConfig cfg;
  cfg.rounds = 2;
  cfg.local_epochs = 2;
  cfg.batch_size = 16;
  cfg.regime = Regime::kBayesian;
  auto a = clients, b = clients, c = clients;
  const auto ra = run_federated(a, cfg, model);
  const auto rb = run_federated(b, cfg, model);
  cfg.workers = 3;
  const auto rc = run_federated(c, cfg, model);
  CHECK(ra.rounds.back().checksum == rb.rounds.back().checksum);
  CHECK(ra.rounds.back().checksum == rc.rounds.back().checksum);
  CHECK(ra.privacy[1].composed.epsilon == rc.privacy[1].composed.epsilon);
}

TEST_CASE("centralized loss decreases on separable data") {
  std::mt19937_64 rng(11);
  const TimeGrid grid = TimeGrid::uniform(4, 1.0);
  ClientState pooled(0, "p", make_records(rng, 600, 3, 3.0, 2.0), grid);
  const auto model = oracle::random_model(rng, 3, {8}, 4, 0.3);
  FederationConfig cfg;
  cfg.rounds = 3;
  cfg.local_epochs = 1;
  cfg.learning_rate = 0.01;
  const auto res = run_centralized(pooled, cfg, model);
  CHECK(res.rounds[1].train_loss[0] < res.rounds[0].train_loss[0]);
  CHECK(res.rounds[2].train_loss[0] < res.rounds[1].train_loss[0]);
}

TEST_CASE("divergence surfaces as a round failure") {
  std::mt19937_64 rng(12);
  const TimeGrid grid = TimeGrid::uniform(2, 1.0);
  std::vector<ClientState> cs{ClientState(0, "a", make_records(rng, 10, 2, 1.0), grid),
                              ClientState(1, "b", make_records(rng, 10, 2, 1.0), grid)};
  const auto model = oracle::random_model(rng, 2, {3}, 2);
  FederationConfig cfg = sgd_config();
  cfg.learning_rate = 1e308;
  cfg.rounds = 3;
  try {
    run_federated(cs, cfg, model);
    FAIL("expected a round failure");
  } catch (const RoundFailure& e) {
    CHECK(e.round() >= 0);
    CHECK(e.client_id() == 0);
  }
}
