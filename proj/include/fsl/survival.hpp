#pragma once

// Discrete-time survival representation and the feed-forward hazard network.
//
// A borrower's follow-up is cut into T intervals [tau_{l-1}, tau_l). The
// network maps covariates to T conditional hazards h_l in (0,1); the
// survival curve is the running product of (1 - h_l). Training minimizes the
// summed negative log-likelihood over the (s_surv, s_fail) indicator vectors.

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

#include "fsl/rng.hpp"

namespace fsl {

class TimeGrid {
 public:
  // boundaries = tau_0 < tau_1 < ... < tau_T, with tau_0 = 0.
  explicit TimeGrid(std::vector<double> boundaries);

  // Equal-width grid 0, width, 2*width, ..., intervals*width.
  static TimeGrid uniform(int intervals, double width = 1.0);

  int intervals() const { return static_cast<int>(boundaries_.size()) - 1; }
  const std::vector<double>& boundaries() const { return boundaries_; }
  // tau_l for l = 0..T.
  double tau(int l) const { return boundaries_[static_cast<std::size_t>(l)]; }
  double horizon() const { return boundaries_.back(); }

  // Number of boundaries tau_1..tau_T that are <= t; i.e. the number of
  // intervals completed at time t. Used for right-continuous step lookup.
  int completed_intervals(double t) const;

 private:
  std::vector<double> boundaries_;
};

struct SurvivalRecord {
  Eigen::VectorXd x;
  double t = 0.0;
  int delta = 0;
};

struct DiscretizedTarget {
  Eigen::VectorXd s_surv;
  Eigen::VectorXd s_fail;
};

// Throws InvalidInput for negative or non-finite times, delta outside {0,1}
// or non-finite covariates.
void validate(const SurvivalRecord& record);

// Events at exactly tau_T fall in the last interval; events strictly after
// the window are treated as censored at tau_T. Censored subjects survive
// interval l iff t >= (tau_{l-1} + tau_l) / 2.
DiscretizedTarget discretize(const SurvivalRecord& record, const TimeGrid& grid);

// Window truncation: an event after tau_T becomes a censoring at tau_T.
SurvivalRecord apply_window(SurvivalRecord record, const TimeGrid& grid);

struct HazardPrediction {
  Eigen::VectorXd hazards;
};

// S_l = prod_{j<=l} (1 - h_j), l = 1..T.
Eigen::VectorXd survival_curve(const HazardPrediction& prediction);

// Hazards are clamped to [kHazardFloor, 1 - kHazardFloor] before taking logs.
inline constexpr double kHazardFloor = 1e-7;

double nll_loss(const HazardPrediction& prediction, const DiscretizedTarget& target);

enum class Activation { kSelu, kTanh };

// Feed-forward network: dense layers with a hidden activation, sigmoid output.
// All weights and biases live in one flat vector: for each layer, the
// out x in weight matrix in column-major order followed by the bias.
class HazardModel {
 public:
  // layer_dims = {d, hidden..., T}; parameters start at zero.
  explicit HazardModel(std::vector<int> layer_dims,
                       Activation activation = Activation::kSelu);

  // Normal weights with std 1/sqrt(fan_in), zero biases.
  static HazardModel initialized(std::vector<int> layer_dims, Rng& rng,
                                 Activation activation = Activation::kSelu);

  const std::vector<int>& layer_dims() const { return layer_dims_; }
  Activation activation() const { return activation_; }
  int input_dim() const { return layer_dims_.front(); }
  int output_dim() const { return layer_dims_.back(); }
  int num_layers() const { return static_cast<int>(layer_dims_.size()) - 1; }
  Eigen::Index num_parameters() const { return params_.size(); }

  const Eigen::VectorXd& parameters() const { return params_; }
  Eigen::VectorXd& mutable_parameters() { return params_; }
  void set_parameters(const Eigen::VectorXd& params);

  Eigen::Map<const Eigen::MatrixXd> weight(int layer) const;
  Eigen::Map<const Eigen::VectorXd> bias(int layer) const;
  Eigen::Map<Eigen::MatrixXd> mutable_weight(int layer);
  Eigen::Map<Eigen::VectorXd> mutable_bias(int layer);

  // Offsets of layer `layer`'s weight block and bias block in the flat vector.
  Eigen::Index weight_offset(int layer) const { return offsets_[static_cast<std::size_t>(layer)]; }
  Eigen::Index bias_offset(int layer) const;

  HazardPrediction forward(const Eigen::VectorXd& x) const;
  // Rows of x are records; returns an n x T matrix of hazards.
  Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& x) const;

 private:
  std::vector<int> layer_dims_;
  Activation activation_;
  std::vector<Eigen::Index> offsets_;
  Eigen::VectorXd params_;
};

// Records stacked row-wise.
struct Batch {
  Eigen::MatrixXd x;
  Eigen::MatrixXd s_surv;
  Eigen::MatrixXd s_fail;

  Eigen::Index size() const { return x.rows(); }
};

Batch make_batch(const std::vector<SurvivalRecord>& records,
                 const std::vector<DiscretizedTarget>& targets,
                 const std::vector<std::size_t>& indices);

// One forward/backward pass over a batch that keeps per-record quantities, so
// that per-sample gradients, their norms and weighted sums of them can be
// formed without materializing every gradient.
class BatchGradients {
 public:
  BatchGradients(const HazardModel& model, const Batch& batch);

  Eigen::Index size() const { return losses_.size(); }
  // Per-record negative log-likelihood.
  const Eigen::VectorXd& losses() const { return losses_; }
  // Full flat gradient of record i's loss.
  Eigen::VectorXd per_sample(Eigen::Index i) const;
  // Squared L2 norm of every per-record gradient.
  Eigen::VectorXd squared_norms() const;
  // sum_i weights[i] * grad_i.
  Eigen::VectorXd weighted_sum(const Eigen::VectorXd& weights) const;

 private:
  const HazardModel& model_;
  // Inputs to each layer (n x in) and loss derivatives w.r.t. each layer's
  // pre-activation (n x out).
  std::vector<Eigen::MatrixXd> inputs_;
  std::vector<Eigen::MatrixXd> deltas_;
  Eigen::VectorXd losses_;
};

std::vector<Eigen::VectorXd> per_sample_gradients(const HazardModel& model,
                                                  const Batch& batch);

// Plain gradient step. Throws TrainingDivergence on a non-finite gradient.
void sgd_step(HazardModel& model, const Eigen::VectorXd& gradient,
              double learning_rate);

struct AdamParams {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  std::int64_t step = 0;
};

void adam_step(HazardModel& model, const Eigen::VectorXd& gradient,
               AdamState& state, const AdamParams& params);

}  // namespace fsl
