#include <cmath>

#include "fsl/errors.hpp"
#include "fsl/survival.hpp"

namespace fsl {
namespace {

void check_gradient(const HazardModel& model, const Eigen::VectorXd& gradient) {
  if (gradient.size() != model.num_parameters()) {
    throw DimensionMismatch("gradient shape does not match model");
  }
  if (!gradient.allFinite()) throw TrainingDivergence("non-finite gradient");
}

}  // namespace

void sgd_step(HazardModel& model, const Eigen::VectorXd& gradient, double learning_rate) {
  check_gradient(model, gradient);
  model.mutable_parameters() -= learning_rate * gradient;
}

void adam_step(HazardModel& model, const Eigen::VectorXd& gradient, AdamState& state,
               const AdamParams& params) {
  check_gradient(model, gradient);
  if (state.m.size() != gradient.size()) {
    state.m = Eigen::VectorXd::Zero(gradient.size());
    state.v = Eigen::VectorXd::Zero(gradient.size());
    state.step = 0;
  }
  ++state.step;
  state.m = params.beta1 * state.m + (1.0 - params.beta1) * gradient;
  state.v = params.beta2 * state.v + (1.0 - params.beta2) * gradient.cwiseAbs2();
  const double c1 = 1.0 - std::pow(params.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(params.beta2, static_cast<double>(state.step));
  model.mutable_parameters().array() -=
      params.learning_rate * (state.m.array() / c1) /
      ((state.v.array() / c2).sqrt() + params.epsilon);
}

}  // namespace fsl
