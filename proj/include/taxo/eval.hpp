#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "taxo/data.hpp"
#include "taxo/entropy.hpp"
#include "taxo/rnn.hpp"

namespace taxo {

enum class Averaging { Weighted, Macro };

/// Percentage of matching entries.
double accuracy(std::span<const Index> predictions, std::span<const Index> targets);

struct PerClassF {
  std::vector<double> scores;  // percent
  /// True where the class has neither support nor predictions (score reported as 0).
  std::vector<bool> undefined;
};

PerClassF per_class_f_measure(std::span<const Index> predictions, std::span<const Index> targets,
                              Index num_classes);

/// Percent. Weighted mode averages per-class F1 by true-class support.
double f_measure(std::span<const Index> predictions, std::span<const Index> targets,
                 Index num_classes, Averaging averaging = Averaging::Weighted);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double loss = 0;
  double valid_score = 0;
};

struct RunReport {
  std::string method;
  std::size_t repetition = 0;
  std::uint64_t seed = 0;
  double accuracy = 0;
  double f_measure = 0;  // support-weighted
  double f_measure_macro = 0;
  std::vector<double> per_class_f;
  std::optional<EntropyRanking> ranking_used;
  std::vector<EpochRecord> epoch_history;  // final training stage
};

struct MetricSummary {
  double mean = 0;
  double std = 0;  // population standard deviation
};

struct AggregateReport {
  std::string method;
  std::size_t repetitions = 0;
  MetricSummary accuracy;
  MetricSummary f_measure;
  MetricSummary f_measure_macro;
  std::vector<MetricSummary> per_class_f;
};

MetricSummary summarize(std::span<const double> values);

AggregateReport aggregate(std::span<const RunReport> reports);

/// One row per repetition, then one aggregate row whose metric cells read "mean±std".
void write_report_csv(std::ostream& out, std::span<const RunReport> reports);

/// Per-repetition rows of a report CSV (aggregate rows are skipped).
std::vector<RunReport> read_report_csv(std::istream& in, const std::string& source = "<csv>");

/// Shortest decimal text that parses back to the same double.
std::string format_real(double value);

struct MethodOutcome {
  Model final_model;
  RunReport report;
};

/// Runs one method on a prepared split with the repetition's seed.
using MethodRunner = std::function<MethodOutcome(const Split& split, std::uint64_t seed)>;

std::uint64_t repetition_seed(std::uint64_t base_seed, std::size_t repetition);

struct RepeatedEvaluation {
  std::vector<MethodOutcome> outcomes;  // ordered by repetition
  AggregateReport aggregate;
};

/// Repetition r draws a fresh split from seeds derived from (base_seed, r). Up to
/// `parallel` repetitions run concurrently; results do not depend on it.
RepeatedEvaluation repeated_evaluation(const Dataset& dataset, const std::string& method,
                                       const MethodRunner& runner, std::size_t repetitions,
                                       std::uint64_t base_seed, const SplitRatios& ratios = {},
                                       bool stratified = false, std::size_t parallel = 1);

}  // namespace taxo
