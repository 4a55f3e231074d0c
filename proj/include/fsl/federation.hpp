#pragma once

// Simulated cross-silo federated training: each round the server samples
// clients, broadcasts the global model, every participant runs E local
// epochs of (optionally private) mini-batch training, and the server averages
// the returned models weighted by local sample counts. Privacy ledgers live
// with the clients; aggregation never touches them.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fsl/dp.hpp"
#include "fsl/rng.hpp"
#include "fsl/survival.hpp"

namespace fsl {

enum class OptimizerKind { kSgd, kAdam };
enum class AggregationWeighting { kSampleCount, kUniform };

struct FederationConfig {
  int rounds = 10;
  int local_epochs = 5;
  double participation_rate = 1.0;
  int batch_size = 32;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  AggregationWeighting weighting = AggregationWeighting::kSampleCount;
  Regime regime = Regime::kNone;
  DpConfig dp;
  BdpConfig bdp;
  // Clients smaller than this use closed-form classical accounting even in
  // the Bayesian regime.
  int fallback_threshold = 100;
  std::uint64_t seed = 42;
  // Number of clients trained concurrently within a round.
  int workers = 1;
  // Test hooks: allow sigma == 0 and local_epochs == 0.
  bool allow_degenerate = false;

  void validate() const;
};

class ClientState {
 public:
  ClientState(int client_id, std::string name, std::vector<SurvivalRecord> records,
              const TimeGrid& grid);

  int id() const { return id_; }
  const std::string& name() const { return name_; }
  std::size_t size() const { return records_.size(); }
  const std::vector<SurvivalRecord>& records() const { return records_; }
  const std::vector<DiscretizedTarget>& targets() const { return targets_; }
  // Every local record stacked into one batch; the Monte-Carlo replacement pool.
  const Batch& all() const { return all_; }

  // Ledgers are created lazily by the first private local_train call.
  bool fallback() const { return fallback_; }
  const std::optional<RdpLedger>& rdp_ledger() const { return rdp_; }
  const std::optional<BdpLedger>& bdp_ledger() const { return bdp_; }
  double epsilon_linear() const { return epsilon_linear_; }
  double delta_linear() const { return delta_linear_; }
  // Largest Monte-Carlo squared deviation seen so far, in noise units
  // (C / L = 1), so the worst case is 4.
  double max_sensitivity() const { return max_sensitivity_; }

  // Regime the client's ledger actually uses under an experiment regime.
  Regime accounting_regime(const FederationConfig& config) const;
  // Ledger-composed spend so far (Renyi composition, single conversion).
  PrivacySpend composed_spend(const FederationConfig& config) const;

 private:
  friend struct LocalTrainer;

  int id_;
  std::string name_;
  std::vector<SurvivalRecord> records_;
  std::vector<DiscretizedTarget> targets_;
  Batch all_;
  bool fallback_ = false;
  std::optional<RdpLedger> rdp_;
  std::optional<BdpLedger> bdp_;
  double epsilon_linear_ = 0.0;
  double delta_linear_ = 0.0;
  double max_sensitivity_ = 0.0;
};

struct LocalResult {
  HazardModel model;
  // This round's spend alone, converted on its own.
  PrivacySpend round_spend;
  double mean_loss = 0.0;
  long steps = 0;
};

// E epochs of shuffled mini-batches (last partial batch kept). Updates the
// client's ledgers. Throws RoundFailure on divergence.
LocalResult local_train(ClientState& client, const HazardModel& global_model,
                        const FederationConfig& config, int round);

// floor(p K) distinct ids from [0, K), at least one, sorted ascending.
std::vector<int> sample_clients(int num_clients, double participation_rate, Rng& rng);

struct ModelUpdate {
  HazardModel model;
  double weight = 1.0;  // n_k, or 1 for uniform weighting
};

// Parameter-wise average with weights w_k / sum_j w_j.
HazardModel aggregate(const std::vector<ModelUpdate>& updates);

std::uint64_t model_checksum(const HazardModel& model);

struct RoundReport {
  int round = 0;
  std::vector<int> participants;
  std::vector<double> train_loss;
  std::vector<PrivacySpend> round_spend;
  std::vector<PrivacySpend> cumulative_spend;
  std::vector<double> epsilon_linear;
  std::vector<double> delta_linear;
  std::vector<double> weights;
  std::uint64_t checksum = 0;
};

struct ClientPrivacy {
  int client_id = 0;
  std::string name;
  Regime accounting = Regime::kNone;
  bool fallback = false;
  PrivacySpend composed;
  double epsilon_linear = 0.0;
  double delta_linear = 0.0;
  long steps = 0;
  double max_sensitivity = 0.0;  // noise units; BDP accounting only
  std::vector<int> orders;
  std::vector<double> order_costs;
};

struct FederationResult {
  HazardModel model;
  std::vector<RoundReport> rounds;
  std::vector<ClientPrivacy> privacy;
};

using RoundCallback = std::function<void(const RoundReport&, const HazardModel&)>;

FederationResult run_federated(std::vector<ClientState>& clients, const FederationConfig& config,
                               const HazardModel& initial_model,
                               const RoundCallback& on_round = {});

// The same machinery on a single pooled client with full participation.
FederationResult run_centralized(ClientState& pooled, const FederationConfig& config,
                                 const HazardModel& initial_model,
                                 const RoundCallback& on_round = {});

}  // namespace fsl
