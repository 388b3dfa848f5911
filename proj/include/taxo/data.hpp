#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "taxo/numerics.hpp"
#include "taxo/rnn.hpp"

namespace taxo {

/// One variable-length multivariate sequence. `series` is steps x dim.
struct TimeSeriesSample {
  std::string id;
  Index label = 0;
  Eigen::MatrixXd series;

  Index length() const { return series.rows(); }
};

struct Dataset {
  std::vector<TimeSeriesSample> samples;
  Index num_classes = 0;
  Index dim = 0;
  std::vector<std::string> class_names;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  std::vector<Index> labels() const;
  std::vector<Index> class_counts() const;

  /// Copy with the same classes/dim and the given samples.
  Dataset with_samples(std::vector<TimeSeriesSample> subset) const;

  /// Throws ConfigError / DimensionError / InvalidInputError when an invariant is broken.
  void validate() const;
};

enum class DatasetFormat { JsonLines, Csv };

DatasetFormat parse_dataset_format(const std::string& name);

struct LoadOptions {
  /// When set, labels are indexed against this list and unknown names are rejected.
  std::optional<std::vector<std::string>> class_names;
};

/// Reads a dataset. Class indices follow sorted class-name order unless
/// `options.class_names` pins them.
Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format,
                     const LoadOptions& options = {});

/// Concatenates two datasets of equal dim, re-indexing over the union of class names.
Dataset merge_datasets(const Dataset& first, const Dataset& second);

void save_jsonl(const Dataset& dataset, const std::filesystem::path& path);

struct SplitRatios {
  double train = 0.5;
  double valid = 0.2;
  double test = 0.3;
};

struct Split {
  Dataset train;
  Dataset valid;
  Dataset test;
};

/// Seeded uniform partition. Valid and test receive floor(ratio * n) samples
/// (per class when stratified), train the remainder.
Split split(const Dataset& dataset, const SplitRatios& ratios, std::uint64_t seed,
            bool stratified = false);

/// Independently permutes the steps of every sample.
Dataset shuffle_timesteps(const Dataset& dataset, std::uint64_t seed);

/// Original samples labelled 1, shuffled samples labelled 0.
Dataset make_binary_shuffle_task(const Dataset& original, const Dataset& shuffled);

/// Level-t task labels: class ranking[j-1] maps to j for j in 1..t, every other class to 0.
struct LabelMapping {
  Index level = 0;
  std::vector<Index> ranking;
  std::vector<Index> mapping;

  Index operator()(Index original_class) const { return mapping.at(original_class); }
  Index num_labels() const { return level + 1; }
};

LabelMapping make_label_mapping(std::span<const Index> ranking, Index level);

std::pair<Dataset, LabelMapping> remap_labels_for_level(const Dataset& dataset,
                                                        std::span<const Index> ranking,
                                                        Index level);

/// Applies an arbitrary total class map; `names` gives the new class names.
Dataset relabel(const Dataset& dataset, std::span<const Index> mapping,
                std::vector<std::string> names);

/// Inverse-frequency weights n / (K * n_c). Every class must be present.
Eigen::VectorXd class_weights(std::span<const Index> labels, Index num_classes);

/// Right-pads with zeros; mask is true exactly on real steps.
SequenceBatch<double> pad_batch(std::span<const TimeSeriesSample* const> samples);
SequenceBatch<double> pad_batch(const Dataset& dataset, std::span<const std::size_t> indices);

/// Recovers the unpadded series of sample `b`.
Eigen::MatrixXd unpad(const SequenceBatch<double>& batch, Index b);

}  // namespace taxo
