#include <algorithm>
#include <cmath>
#include <cstring>
#include <future>
#include <limits>
#include <numeric>
#include <string>

#include "fsl/errors.hpp"
#include "fsl/federation.hpp"

namespace fsl {

void FederationConfig::validate() const {
  if (rounds < 1) throw ConfigError("federation.rounds must be >= 1");
  if (local_epochs < (allow_degenerate ? 0 : 1)) {
    throw ConfigError("federation.local_epochs must be >= 1");
  }
  if (!(participation_rate > 0.0 && participation_rate <= 1.0)) {
    throw ConfigError("federation.participation_rate must lie in (0,1]");
  }
  if (batch_size < 1) throw ConfigError("federation.batch_size must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("federation.learning_rate must be finite and nonnegative");
  }
  if (workers < 1) throw ConfigError("federation.workers must be >= 1");
  if (regime != Regime::kNone) dp.validate(allow_degenerate);
  if (regime == Regime::kBayesian) bdp.validate();
}

ClientState::ClientState(int client_id, std::string name, std::vector<SurvivalRecord> records,
                         const TimeGrid& grid)
    : id_(client_id), name_(std::move(name)), records_(std::move(records)) {
  if (records_.empty()) throw InvalidInput("client '" + name_ + "' has no records");
  targets_.reserve(records_.size());
  for (const auto& r : records_) targets_.push_back(discretize(r, grid));
  std::vector<std::size_t> all(records_.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  all_ = make_batch(records_, targets_, all);
}

Regime ClientState::accounting_regime(const FederationConfig& config) const {
  if (config.regime == Regime::kBayesian &&
      static_cast<long>(records_.size()) < config.fallback_threshold) {
    return Regime::kClassical;
  }
  return config.regime;
}

PrivacySpend ClientState::composed_spend(const FederationConfig& config) const {
  switch (accounting_regime(config)) {
    case Regime::kNone:
      return {};
    case Regime::kClassical:
      if (!rdp_) return {0.0, 0.0, Regime::kClassical, 0};
      if (config.dp.noise_multiplier == 0.0) {
        return {std::numeric_limits<double>::infinity(), config.dp.delta, Regime::kClassical, 0};
      }
      return rdp_to_dp(*rdp_, config.dp.delta);
    case Regime::kBayesian:
      if (!bdp_) return {0.0, 0.0, Regime::kBayesian, 0};
      return bdp_finalize(*bdp_, config.bdp.beta, config.bdp.gamma);
  }
  return {};
}

struct LocalTrainer {
  static LocalResult run(ClientState& client, const HazardModel& global_model,
                         const FederationConfig& config, int round) {
    LocalResult result{global_model, {}, 0.0, 0};
    const Regime accounting = client.accounting_regime(config);
    result.round_spend.regime = accounting;
    if (config.local_epochs == 0) return result;

    const auto id = static_cast<std::uint64_t>(client.id());
    const auto r = static_cast<std::uint64_t>(round);
    Rng shuffle_rng = make_rng({config.seed, id, r, static_cast<std::uint64_t>(Stream::kShuffle)});
    Rng noise_rng = make_rng({config.seed, id, r, static_cast<std::uint64_t>(Stream::kNoise)});
    Rng mc_rng = make_rng({config.seed, id, r, static_cast<std::uint64_t>(Stream::kSensitivity)});

    const std::size_t n = client.size();
    const auto batch_size = static_cast<std::size_t>(config.batch_size);
    const double q = std::min(1.0, static_cast<double>(batch_size) / static_cast<double>(n));
    const double clip = config.dp.clip_norm;
    const double sigma = config.dp.noise_multiplier;
    const bool private_training = config.regime != Regime::kNone;
    const bool accounted = private_training && sigma > 0.0;

    RdpLedger round_rdp;
    BdpLedger round_bdp(config.bdp.orders);
    std::vector<bool> excluded(n, false);

    HazardModel& model = result.model;
    AdamState adam;
    const AdamParams adam_params{config.learning_rate};
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    double loss_sum = 0.0;
    std::size_t seen = 0;

    try {
      for (int epoch = 0; epoch < config.local_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (std::size_t start = 0; start < n; start += batch_size) {
          const std::size_t stop = std::min(n, start + batch_size);
          const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                             order.begin() + static_cast<std::ptrdiff_t>(stop));
          const Batch batch = make_batch(client.records_, client.targets_, idx);
          const BatchGradients grads(model, batch);
          const double batch_loss = grads.losses().sum();
          if (!std::isfinite(batch_loss)) throw TrainingDivergence("non-finite training loss");
          loss_sum += batch_loss;
          seen += idx.size();
          const auto L = static_cast<double>(idx.size());

          Eigen::VectorXd gradient;
          if (!private_training) {
            gradient = grads.weighted_sum(Eigen::VectorXd::Ones(grads.size())) / L;
          } else {
            gradient = sanitize_batch(grads, clip, sigma, noise_rng);
          }

          if (accounted && accounting == Regime::kBayesian) {
            const bool whole = idx.size() == n;
            for (std::size_t i : idx) excluded[i] = true;
            std::vector<double> deltas =
                mc_sensitivity(model, batch, grads, client.all_, config.bdp.mc_samples, clip,
                               mc_rng, whole ? nullptr : &excluded);
            for (std::size_t i : idx) excluded[i] = false;
            // Express deviations in units of the noise scale C / L.
            const double scale = (L / clip) * (L / clip);
            for (double& d : deltas) {
              d *= scale;
              client.max_sensitivity_ = std::max(client.max_sensitivity_, d);
            }
            std::vector<double> costs;
            costs.reserve(config.bdp.orders.size());
            for (int lambda : config.bdp.orders) {
              costs.push_back(bdp_step_cost(deltas, lambda, q, sigma, config.bdp.gamma));
            }
            round_bdp.add(costs);
          } else if (accounted && accounting == Regime::kClassical) {
            round_rdp.add_steps(q, sigma, 1);
          }

          if (config.optimizer == OptimizerKind::kAdam) {
            adam_step(model, gradient, adam, adam_params);
          } else {
            sgd_step(model, gradient, config.learning_rate);
          }
          if (!model.parameters().allFinite()) {
            throw TrainingDivergence("non-finite model parameters");
          }
          ++result.steps;
        }
      }
    } catch (const TrainingDivergence& e) {
      throw RoundFailure(std::string("client ") + client.name() + ": " + e.what(), round,
                         client.id());
    }
    result.mean_loss = seen > 0 ? loss_sum / static_cast<double>(seen) : 0.0;

    if (private_training) {
      if (accounting == Regime::kBayesian) {
        if (!client.bdp_) client.bdp_.emplace(config.bdp.orders);
        client.bdp_->add(round_bdp);
        result.round_spend = bdp_finalize(round_bdp, config.bdp.beta, config.bdp.gamma);
      } else {
        if (!client.rdp_) client.rdp_.emplace();
        client.rdp_->add(round_rdp);
        result.round_spend =
            accounted ? rdp_to_dp(round_rdp, config.dp.delta)
                      : PrivacySpend{std::numeric_limits<double>::infinity(), config.dp.delta,
                                     Regime::kClassical, 0};
      }
      client.fallback_ = accounting != config.regime;
      client.epsilon_linear_ += result.round_spend.epsilon;
      client.delta_linear_ += result.round_spend.delta;
    }
    return result;
  }
};

LocalResult local_train(ClientState& client, const HazardModel& global_model,
                        const FederationConfig& config, int round) {
  return LocalTrainer::run(client, global_model, config, round);
}

std::vector<int> sample_clients(int num_clients, double participation_rate, Rng& rng) {
  if (num_clients <= 0) throw InvalidInput("no clients to sample from");
  if (!(participation_rate > 0.0 && participation_rate <= 1.0)) {
    throw InvalidInput("participation rate must lie in (0,1]");
  }
  const int count = std::max(
      1, static_cast<int>(std::floor(participation_rate * num_clients + 1e-9)));
  std::vector<int> ids(static_cast<std::size_t>(num_clients));
  std::iota(ids.begin(), ids.end(), 0);
  if (count == num_clients) return ids;
  std::vector<int> chosen;
  std::sample(ids.begin(), ids.end(), std::back_inserter(chosen), count, rng);
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

HazardModel aggregate(const std::vector<ModelUpdate>& updates) {
  if (updates.empty()) throw InvalidInput("nothing to aggregate");
  const auto& first = updates.front().model;
  double total = 0.0;
  for (const auto& u : updates) {
    if (u.model.layer_dims() != first.layer_dims()) {
      throw DimensionMismatch("aggregated models have different shapes");
    }
    if (!(u.weight > 0.0)) throw InvalidInput("aggregation weights must be positive");
    total += u.weight;
  }
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(first.num_parameters());
  for (const auto& u : updates) sum += (u.weight / total) * u.model.parameters();
  HazardModel out = first;
  out.set_parameters(sum);
  return out;
}

std::uint64_t model_checksum(const HazardModel& model) {
  std::uint64_t h = 1469598103934665603ULL;
  const auto& p = model.parameters();
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    std::uint64_t bits = 0;
    const double v = p(i);
    std::memcpy(&bits, &v, sizeof bits);
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xffU;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

FederationResult run_federated(std::vector<ClientState>& clients, const FederationConfig& config,
                               const HazardModel& initial_model, const RoundCallback& on_round) {
  config.validate();
  if (clients.empty()) throw InvalidInput("federation needs at least one client");
  Rng server_rng = make_rng({config.seed, static_cast<std::uint64_t>(Stream::kSampling)});
  FederationResult out{initial_model, {}, {}};

  for (int round = 0; round < config.rounds; ++round) {
    const std::vector<int> participants =
        sample_clients(static_cast<int>(clients.size()), config.participation_rate, server_rng);

    std::vector<LocalResult> results(participants.size(),
                                     LocalResult{out.model, {}, 0.0, 0});
    auto train_one = [&](std::size_t i) {
      results[i] = local_train(clients[static_cast<std::size_t>(participants[i])], out.model,
                               config, round);
    };
    if (config.workers <= 1 || participants.size() <= 1) {
      for (std::size_t i = 0; i < participants.size(); ++i) train_one(i);
    } else {
      // Clients write to disjoint slots; the reduction below stays in id order.
      for (std::size_t start = 0; start < participants.size();
           start += static_cast<std::size_t>(config.workers)) {
        std::vector<std::future<void>> jobs;
        const std::size_t stop =
            std::min(participants.size(), start + static_cast<std::size_t>(config.workers));
        for (std::size_t i = start; i < stop; ++i) {
          jobs.push_back(std::async(std::launch::async, train_one, i));
        }
        for (auto& j : jobs) j.get();
      }
    }

    RoundReport report;
    report.round = round;
    report.participants = participants;
    std::vector<ModelUpdate> updates;
    double total = 0.0;
    for (std::size_t i = 0; i < participants.size(); ++i) {
      const ClientState& c = clients[static_cast<std::size_t>(participants[i])];
      const double w = config.weighting == AggregationWeighting::kSampleCount
                           ? static_cast<double>(c.size())
                           : 1.0;
      total += w;
      updates.push_back({std::move(results[i].model), w});
      report.train_loss.push_back(results[i].mean_loss);
      report.round_spend.push_back(results[i].round_spend);
      report.cumulative_spend.push_back(c.composed_spend(config));
      report.epsilon_linear.push_back(c.epsilon_linear());
      report.delta_linear.push_back(c.delta_linear());
    }
    for (const auto& u : updates) report.weights.push_back(u.weight / total);
    out.model = aggregate(updates);
    report.checksum = model_checksum(out.model);
    if (on_round) on_round(report, out.model);
    out.rounds.push_back(std::move(report));
  }

  for (const auto& c : clients) {
    ClientPrivacy p;
    p.client_id = c.id();
    p.name = c.name();
    p.accounting = c.accounting_regime(config);
    p.fallback = p.accounting != config.regime;
    p.composed = c.composed_spend(config);
    p.epsilon_linear = c.epsilon_linear();
    p.delta_linear = c.delta_linear();
    p.max_sensitivity = c.max_sensitivity();
    if (c.rdp_ledger()) {
      p.steps = c.rdp_ledger()->steps();
      p.orders = c.rdp_ledger()->orders();
      p.order_costs = c.rdp_ledger()->costs();
    } else if (c.bdp_ledger()) {
      p.steps = c.bdp_ledger()->steps();
      p.orders = c.bdp_ledger()->orders();
      p.order_costs = c.bdp_ledger()->costs();
    }
    out.privacy.push_back(std::move(p));
  }
  return out;
}

FederationResult run_centralized(ClientState& pooled, const FederationConfig& config,
                                 const HazardModel& initial_model, const RoundCallback& on_round) {
  FederationConfig central = config;
  central.participation_rate = 1.0;
  std::vector<ClientState> single{pooled};
  FederationResult result = run_federated(single, central, initial_model, on_round);
  pooled = std::move(single.front());
  return result;
}

}  // namespace fsl
