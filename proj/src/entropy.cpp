#include "taxo/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "taxo/error.hpp"

namespace taxo {

ConfusionMatrix confusion_from_predictions(std::span<const Index> predictions,
                                           std::span<const Index> targets, Index num_classes) {
  if (predictions.size() != targets.size())
    throw DimensionError("confusion: " + std::to_string(predictions.size()) + " predictions for " +
                         std::to_string(targets.size()) + " targets");
  ConfusionMatrix m = ConfusionMatrix::Zero(num_classes, num_classes);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const Index j = targets[i];
    const Index k = predictions[i];
    if (j < 0 || j >= num_classes || k < 0 || k >= num_classes)
      throw IndexError("confusion: label out of range");
    ++m(j, k);
  }
  return m;
}

ClassEntropy class_entropy(const ConfusionMatrix& confusion, std::optional<double> log_base) {
  if (confusion.rows() != confusion.cols()) throw DimensionError("confusion matrix must be square");
  if ((confusion.array() < 0).any())
    throw InvalidInputError("confusion matrix has negative counts");
  if (log_base && !(*log_base > 1.0 && std::isfinite(*log_base)))
    throw InvalidInputError("entropy: log base must be finite and greater than 1");
  const double scale = log_base ? 1.0 / std::log(*log_base) : 1.0;
  std::vector<std::int64_t> counts;
  ClassEntropy out{Eigen::VectorXd::Zero(confusion.rows()), {}};
  for (Index j = 0; j < confusion.rows(); ++j) {
    const auto total = static_cast<double>(confusion.row(j).sum());
    if (total == 0) {
      out.empty_rows.push_back(j);
      continue;
    }
    // Summed in sorted order so rows with the same distribution tie exactly.
    counts.clear();
    for (Index k = 0; k < confusion.cols(); ++k)
      if (confusion(j, k) > 0) counts.push_back(confusion(j, k));
    std::sort(counts.begin(), counts.end());
    double h = 0;
    for (const auto c : counts) {
      const double p = static_cast<double>(c) / total;
      h -= p * std::log(p);
    }
    out.entropies(j) = h * scale;
  }
  return out;
}

EntropyRanking rank_classes(const Eigen::VectorXd& entropies) {
  EntropyRanking out{entropies, std::vector<Index>(static_cast<std::size_t>(entropies.size()))};
  std::iota(out.ranking.begin(), out.ranking.end(), Index{0});
  std::stable_sort(out.ranking.begin(), out.ranking.end(),
                   [&](Index a, Index b) { return entropies(a) > entropies(b); });
  return out;
}

}  // namespace taxo
