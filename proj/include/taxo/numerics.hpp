#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <string>

#include <Eigen/Dense>

#include "taxo/error.hpp"

namespace taxo {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Eigen::Index;

/// Lower bound applied to a probability before taking its log in the loss.
inline constexpr double kLogClip = 1e-12;

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
  return x.derived().array().isFinite().all();
}

template <typename Derived>
auto sigmoid(const Eigen::ArrayBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return Scalar(1) / (Scalar(1) + (-x).exp());
}

/// Numerically stable softmax of a vector (max is subtracted before exp).
template <typename Derived>
Vector<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  if (logits.size() == 0) throw InvalidInputError("softmax: empty input");
  if (!all_finite(logits)) throw InvalidInputError("softmax: non-finite input");
  Vector<Scalar> e = (logits.array() - logits.maxCoeff()).exp().matrix();
  return e / e.sum();
}

/// Column-wise softmax; each column of the result is a distribution.
template <typename Derived>
Matrix<typename Derived::Scalar> softmax_columns(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  if (!all_finite(logits)) throw InvalidInputError("softmax: non-finite input");
  Matrix<Scalar> e =
      (logits.array().rowwise() - logits.colwise().maxCoeff().array()).exp().matrix();
  return e.array().rowwise() / e.colwise().sum().array();
}

/// -weight * log(max(probs[target], kLogClip)).
template <typename Derived>
typename Derived::Scalar cross_entropy(const Eigen::MatrixBase<Derived>& probs, Index target,
                                       typename Derived::Scalar weight) {
  using Scalar = typename Derived::Scalar;
  if (target < 0 || target >= probs.size())
    throw IndexError("cross_entropy: target " + std::to_string(target) + " out of range [0, " +
                     std::to_string(probs.size()) + ")");
  const Scalar p = std::max<Scalar>(probs(target), Scalar(kLogClip));
  // Within the clip band of 1 the loss is reported as exactly +0.
  return p >= Scalar(1) - Scalar(kLogClip) ? Scalar(0) : -weight * std::log(p);
}

template <typename Scalar>
struct AdamState {
  Vector<Scalar> first_moment;
  Vector<Scalar> second_moment;
  std::size_t step_count = 0;
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar epsilon = Scalar(1e-8);
  Scalar learning_rate = Scalar(5e-4);

  AdamState() = default;
  AdamState(Index size, Scalar lr)
      : first_moment(Vector<Scalar>::Zero(size)),
        second_moment(Vector<Scalar>::Zero(size)),
        learning_rate(lr) {}

  Index size() const { return first_moment.size(); }
};

/// One bias-corrected Adam update of `params` in place.
template <typename Scalar>
void adam_step(Eigen::Ref<Vector<Scalar>> params, const Eigen::Ref<const Vector<Scalar>>& grads,
               AdamState<Scalar>& state) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size() ||
      params.size() != state.second_moment.size())
    throw DimensionError("adam_step: params " + std::to_string(params.size()) + ", grads " +
                         std::to_string(grads.size()) + ", state " +
                         std::to_string(state.first_moment.size()));
  ++state.step_count;
  const auto t = static_cast<Scalar>(state.step_count);
  state.first_moment = state.beta1 * state.first_moment + (Scalar(1) - state.beta1) * grads;
  state.second_moment =
      state.beta2 * state.second_moment + (Scalar(1) - state.beta2) * grads.cwiseAbs2();
  const Scalar c1 = Scalar(1) - std::pow(state.beta1, t);
  const Scalar c2 = Scalar(1) - std::pow(state.beta2, t);
  params.array() -= state.learning_rate * (state.first_moment.array() / c1) /
                    ((state.second_moment.array() / c2).sqrt() + state.epsilon);
}

/// Central-difference gradient of `loss` at `params`. Test oracle only.
template <typename Scalar, typename LossFn>
Vector<Scalar> finite_difference_gradient(LossFn&& loss, const Vector<Scalar>& params, Scalar eps) {
  assert(eps >= Scalar(1e-7) && eps <= Scalar(1e-4));
  Vector<Scalar> grad(params.size());
  Vector<Scalar> probe = params;
  for (Index i = 0; i < params.size(); ++i) {
    probe(i) = params(i) + eps;
    const Scalar up = loss(static_cast<const Vector<Scalar>&>(probe));
    probe(i) = params(i) - eps;
    const Scalar down = loss(static_cast<const Vector<Scalar>&>(probe));
    probe(i) = params(i);
    grad(i) = (up - down) / (Scalar(2) * eps);
  }
  return grad;
}

}  // namespace taxo
