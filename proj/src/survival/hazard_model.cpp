#include <algorithm>
#include <cmath>
#include <string>

#include "fsl/errors.hpp"
#include "fsl/survival.hpp"

namespace fsl {
namespace {

constexpr double kSeluAlpha = 1.6732632423543772848170429916717;
constexpr double kSeluScale = 1.0507009873554804934193349852946;

double activate(Activation kind, double z) {
  switch (kind) {
    case Activation::kSelu:
      return z > 0.0 ? kSeluScale * z : kSeluScale * kSeluAlpha * std::expm1(z);
    case Activation::kTanh:
      return std::tanh(z);
  }
  return z;
}

double activate_derivative(Activation kind, double z) {
  switch (kind) {
    case Activation::kSelu:
      return z > 0.0 ? kSeluScale : kSeluScale * kSeluAlpha * std::exp(z);
    case Activation::kTanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
  }
  return 1.0;
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Pre-activation of layer `layer` for row-stacked inputs.
Eigen::MatrixXd affine(const HazardModel& model, int layer, const Eigen::MatrixXd& in) {
  Eigen::MatrixXd z = in * model.weight(layer).transpose();
  z.rowwise() += model.bias(layer).transpose();
  return z;
}

}  // namespace

HazardModel::HazardModel(std::vector<int> layer_dims, Activation activation)
    : layer_dims_(std::move(layer_dims)), activation_(activation) {
  if (layer_dims_.size() < 2) throw InvalidInput("hazard model needs input and output widths");
  Eigen::Index total = 0;
  for (std::size_t l = 0; l + 1 < layer_dims_.size(); ++l) {
    if (layer_dims_[l] < 1 || layer_dims_[l + 1] < 1) {
      throw InvalidInput("layer widths must be positive");
    }
    offsets_.push_back(total);
    total += static_cast<Eigen::Index>(layer_dims_[l]) * layer_dims_[l + 1] + layer_dims_[l + 1];
  }
  params_ = Eigen::VectorXd::Zero(total);
}

HazardModel HazardModel::initialized(std::vector<int> layer_dims, Rng& rng,
                                     Activation activation) {
  HazardModel model(std::move(layer_dims), activation);
  for (int l = 0; l < model.num_layers(); ++l) {
    std::normal_distribution<double> normal(
        0.0, 1.0 / std::sqrt(static_cast<double>(model.layer_dims_[static_cast<std::size_t>(l)])));
    auto w = model.mutable_weight(l);
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = normal(rng);
    }
  }
  return model;
}

void HazardModel::set_parameters(const Eigen::VectorXd& params) {
  if (params.size() != params_.size()) throw DimensionMismatch("parameter vector size mismatch");
  params_ = params;
}

Eigen::Index HazardModel::bias_offset(int layer) const {
  const auto l = static_cast<std::size_t>(layer);
  return offsets_[l] + static_cast<Eigen::Index>(layer_dims_[l]) * layer_dims_[l + 1];
}

Eigen::Map<const Eigen::MatrixXd> HazardModel::weight(int layer) const {
  const auto l = static_cast<std::size_t>(layer);
  return {params_.data() + offsets_[l], layer_dims_[l + 1], layer_dims_[l]};
}

Eigen::Map<const Eigen::VectorXd> HazardModel::bias(int layer) const {
  return {params_.data() + bias_offset(layer), layer_dims_[static_cast<std::size_t>(layer) + 1]};
}

Eigen::Map<Eigen::MatrixXd> HazardModel::mutable_weight(int layer) {
  const auto l = static_cast<std::size_t>(layer);
  return {params_.data() + offsets_[l], layer_dims_[l + 1], layer_dims_[l]};
}

Eigen::Map<Eigen::VectorXd> HazardModel::mutable_bias(int layer) {
  return {params_.data() + bias_offset(layer), layer_dims_[static_cast<std::size_t>(layer) + 1]};
}

Eigen::MatrixXd HazardModel::forward_batch(const Eigen::MatrixXd& x) const {
  if (x.cols() != input_dim()) {
    throw DimensionMismatch("expected " + std::to_string(input_dim()) + " covariates, got " +
                            std::to_string(x.cols()));
  }
  Eigen::MatrixXd a = x;
  for (int l = 0; l < num_layers(); ++l) {
    Eigen::MatrixXd z = affine(*this, l, a);
    const bool last = l + 1 == num_layers();
    a = last ? z.unaryExpr([](double v) { return sigmoid(v); }).eval()
             : z.unaryExpr([this](double v) { return activate(activation_, v); }).eval();
  }
  return a;
}

HazardPrediction HazardModel::forward(const Eigen::VectorXd& x) const {
  return {forward_batch(x.transpose()).row(0).transpose()};
}

Batch make_batch(const std::vector<SurvivalRecord>& records,
                 const std::vector<DiscretizedTarget>& targets,
                 const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw InvalidInput("empty batch");
  const auto n = static_cast<Eigen::Index>(indices.size());
  const Eigen::Index d = records[indices[0]].x.size();
  const Eigen::Index T = targets[indices[0]].s_surv.size();
  Batch batch{Eigen::MatrixXd(n, d), Eigen::MatrixXd(n, T), Eigen::MatrixXd(n, T)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::size_t k = indices[static_cast<std::size_t>(i)];
    batch.x.row(i) = records[k].x.transpose();
    batch.s_surv.row(i) = targets[k].s_surv.transpose();
    batch.s_fail.row(i) = targets[k].s_fail.transpose();
  }
  return batch;
}

BatchGradients::BatchGradients(const HazardModel& model, const Batch& batch) : model_(model) {
  if (batch.size() == 0) throw InvalidInput("empty batch");
  if (batch.x.cols() != model.input_dim()) throw DimensionMismatch("batch covariate width");
  if (batch.s_surv.cols() != model.output_dim() || batch.s_fail.cols() != model.output_dim()) {
    throw DimensionMismatch("batch target width does not match model output");
  }
  const int L = model.num_layers();
  inputs_.resize(static_cast<std::size_t>(L));
  deltas_.resize(static_cast<std::size_t>(L));
  std::vector<Eigen::MatrixXd> act_grad(static_cast<std::size_t>(L));

  Eigen::MatrixXd a = batch.x;
  Eigen::MatrixXd h;
  for (int l = 0; l < L; ++l) {
    inputs_[static_cast<std::size_t>(l)] = a;
    Eigen::MatrixXd z = affine(model, l, a);
    if (l + 1 == L) {
      h = z.unaryExpr([](double v) { return sigmoid(v); });
    } else {
      const Activation kind = model.activation();
      act_grad[static_cast<std::size_t>(l)] =
          z.unaryExpr([kind](double v) { return activate_derivative(kind, v); });
      a = z.unaryExpr([kind](double v) { return activate(kind, v); });
    }
  }

  // d/dz of -s*log(1-h) - f*log(h) with h = sigmoid(z) is s*h - f*(1-h);
  // zero where the clamp is active.
  const Eigen::Index n = batch.size();
  const Eigen::Index T = h.cols();
  losses_ = Eigen::VectorXd::Zero(n);
  Eigen::MatrixXd dz(n, T);
  for (Eigen::Index i = 0; i < n; ++i) {
    double loss = 0.0;
    for (Eigen::Index l = 0; l < T; ++l) {
      const double hv = h(i, l);
      const double s = batch.s_surv(i, l);
      const double f = batch.s_fail(i, l);
      const double hc = std::clamp(hv, kHazardFloor, 1.0 - kHazardFloor);
      if (s != 0.0) loss -= s * std::log1p(-hc);
      if (f != 0.0) loss -= f * std::log(hc);
      const bool clamped = hv < kHazardFloor || hv > 1.0 - kHazardFloor;
      dz(i, l) = clamped ? 0.0 : s * hv - f * (1.0 - hv);
    }
    losses_(i) = loss;
  }

  deltas_[static_cast<std::size_t>(L - 1)] = std::move(dz);
  for (int l = L - 1; l > 0; --l) {
    const auto lu = static_cast<std::size_t>(l);
    Eigen::MatrixXd back = deltas_[lu] * model.weight(l);
    deltas_[lu - 1] = back.cwiseProduct(act_grad[lu - 1]);
  }
}

Eigen::VectorXd BatchGradients::per_sample(Eigen::Index i) const {
  Eigen::VectorXd g(model_.num_parameters());
  for (int l = 0; l < model_.num_layers(); ++l) {
    const auto lu = static_cast<std::size_t>(l);
    const auto& delta = deltas_[lu];
    const auto& in = inputs_[lu];
    Eigen::Map<Eigen::MatrixXd> gw(g.data() + model_.weight_offset(l), delta.cols(), in.cols());
    gw.noalias() = delta.row(i).transpose() * in.row(i);
    g.segment(model_.bias_offset(l), delta.cols()) = delta.row(i).transpose();
  }
  return g;
}

Eigen::VectorXd BatchGradients::squared_norms() const {
  Eigen::VectorXd norms = Eigen::VectorXd::Zero(size());
  for (std::size_t l = 0; l < deltas_.size(); ++l) {
    const Eigen::VectorXd delta_sq = deltas_[l].rowwise().squaredNorm();
    const Eigen::VectorXd in_sq = inputs_[l].rowwise().squaredNorm();
    norms.array() += delta_sq.array() * (in_sq.array() + 1.0);
  }
  return norms;
}

Eigen::VectorXd BatchGradients::weighted_sum(const Eigen::VectorXd& weights) const {
  if (weights.size() != size()) throw DimensionMismatch("one weight per record required");
  Eigen::VectorXd g(model_.num_parameters());
  for (int l = 0; l < model_.num_layers(); ++l) {
    const auto lu = static_cast<std::size_t>(l);
    const auto& delta = deltas_[lu];
    const auto& in = inputs_[lu];
    Eigen::Map<Eigen::MatrixXd> gw(g.data() + model_.weight_offset(l), delta.cols(), in.cols());
    gw.noalias() = delta.transpose() * weights.asDiagonal() * in;
    g.segment(model_.bias_offset(l), delta.cols()).noalias() = delta.transpose() * weights;
  }
  return g;
}

std::vector<Eigen::VectorXd> per_sample_gradients(const HazardModel& model, const Batch& batch) {
  BatchGradients grads(model, batch);
  std::vector<Eigen::VectorXd> out;
  out.reserve(static_cast<std::size_t>(grads.size()));
  for (Eigen::Index i = 0; i < grads.size(); ++i) out.push_back(grads.per_sample(i));
  return out;
}

}  // namespace fsl
