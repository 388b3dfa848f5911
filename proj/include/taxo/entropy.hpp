#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "taxo/numerics.hpp"

namespace taxo {

/// Entry (j, k): samples of true class j predicted as k.
using ConfusionMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

ConfusionMatrix confusion_from_predictions(std::span<const Index> predictions,
                                           std::span<const Index> targets, Index num_classes);

struct ClassEntropy {
  Eigen::VectorXd entropies;
  /// Classes whose confusion row is empty; their entropy is reported as 0.
  std::vector<Index> empty_rows;
};

/// Entropy of each row-normalised confusion row, 0 log 0 := 0. Natural log unless
/// `log_base` is given.
ClassEntropy class_entropy(const ConfusionMatrix& confusion,
                           std::optional<double> log_base = std::nullopt);

struct EntropyRanking {
  Eigen::VectorXd entropies;
  /// Classes by decreasing entropy, ties by ascending class index.
  std::vector<Index> ranking;
};

EntropyRanking rank_classes(const Eigen::VectorXd& entropies);

}  // namespace taxo
