// Shared by the unit tests and the acceptance suite: random small instances and the
// finite-difference comparison for BPTT gradients.
#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "taxo/numerics.hpp"
#include "taxo/rnn.hpp"

namespace taxo::testing {

struct GradCheckInstance {
  Model model;
  SequenceBatch<double> batch;
  std::vector<Index> targets;
  Eigen::VectorXd class_weights;
};

/// hidden <= 8, steps <= 5, classes <= 4, batch <= 3 with random lengths and class weights.
inline GradCheckInstance random_instance(std::uint64_t seed, CellKind kind) {
  std::mt19937_64 rng(seed);
  auto pick = [&](Index lo, Index hi) { return std::uniform_int_distribution<Index>(lo, hi)(rng); };
  std::normal_distribution<double> normal(0.0, 1.0);

  const Index input = pick(1, 4);
  const Index hidden = pick(1, 8);
  const Index classes = pick(2, 4);
  const Index batch = pick(1, 3);
  const Index steps = pick(1, 5);

  GradCheckInstance inst;
  inst.model = init_params(seed ^ 0x5eedULL, input, hidden, classes, kind);
  // Non-zero biases and larger weights exercise every gate away from its linear regime.
  Eigen::VectorXd params = flatten(inst.model);
  for (Index i = 0; i < params.size(); ++i) params(i) += 0.5 * normal(rng);
  assign_parameters(inst.model, params);

  inst.batch.steps.assign(static_cast<std::size_t>(steps), Eigen::MatrixXd::Zero(input, batch));
  inst.batch.mask.setConstant(batch, steps, false);
  for (Index b = 0; b < batch; ++b) {
    const Index len = pick(1, steps);
    for (Index t = 0; t < len; ++t) {
      for (Index d = 0; d < input; ++d)
        inst.batch.steps[static_cast<std::size_t>(t)](d, b) = normal(rng);
      inst.batch.mask(b, t) = true;
    }
    inst.targets.push_back(pick(0, classes - 1));
  }
  inst.class_weights.resize(classes);
  for (Index k = 0; k < classes; ++k)
    inst.class_weights(k) = std::uniform_real_distribution<double>(0.5, 2.0)(rng);
  return inst;
}

/// max_i |analytic_i - numeric_i| / max(|analytic_i|, |numeric_i|, 1e-6).
inline double max_relative_error(const Eigen::VectorXd& analytic, const Eigen::VectorXd& numeric) {
  double worst = 0;
  for (Index i = 0; i < analytic.size(); ++i) {
    const double scale = std::max({std::abs(analytic(i)), std::abs(numeric(i)), 1e-6});
    worst = std::max(worst, std::abs(analytic(i) - numeric(i)) / scale);
  }
  return worst;
}

/// Compares model_backward with central differences of model_loss at eps.
inline double gradient_check(const GradCheckInstance& inst, double eps = 1e-5) {
  const auto lg = model_backward(inst.model, inst.batch, inst.targets, inst.class_weights);
  Model probe = inst.model;
  const auto loss = [&](const Eigen::VectorXd& p) {
    assign_parameters(probe, p);
    return model_loss(probe, inst.batch, inst.targets, inst.class_weights);
  };
  const Eigen::VectorXd numeric = finite_difference_gradient(loss, flatten(inst.model), eps);
  return max_relative_error(flatten(lg.gradient), numeric);
}

}  // namespace taxo::testing
