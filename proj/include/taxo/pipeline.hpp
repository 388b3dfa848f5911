#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "taxo/data.hpp"
#include "taxo/entropy.hpp"
#include "taxo/eval.hpp"
#include "taxo/rnn.hpp"

namespace taxo {

enum class SelectionMetric { Accuracy, FMeasure };

SelectionMetric parse_selection_metric(const std::string& name);
std::string to_string(SelectionMetric metric);

struct TrainConfig {
  std::size_t epochs = 250;
  double learning_rate = 5e-4;
  std::size_t batch_size = 32;
  Index hidden_dim = 256;
  CellKind cell_kind = CellKind::LSTM;
  std::uint64_t seed = 0;
  SelectionMetric selection_metric = SelectionMetric::Accuracy;
  /// Global gradient-norm cap; 0 disables clipping.
  double grad_clip = 0;

  void validate() const;
};

/// Which label counts drive the class weights of the weighted variant during pretraining.
enum class WeightSource { RemappedTask, OriginalClasses };

struct TaxoConfig {
  /// Number of taxonomy levels; 0 selects the full depth |C| - 1.
  Index depth = 3;
  /// Epoch budget of each pretraining level; 0 reuses TrainConfig::epochs.
  std::size_t level_epochs = 0;
  bool carry_attention = false;
  bool weighted_loss = false;
  WeightSource weight_source = WeightSource::RemappedTask;

  Index resolved_depth(Index num_classes) const;
};

/// Speech regime: LSTM, 256 units, 250 epochs. SITS regime: GRU, 512 units, 1000 epochs.
TrainConfig preset(const std::string& name);

struct TrainResult {
  Model model;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_score = 0;
};

/// Mini-batch Adam for `config.epochs` epochs, returning the epoch snapshot with the best
/// validation score (earliest on ties). `sample_weights` is per training sample, empty for 1.
TrainResult train_model(const Dataset& train, const Dataset& valid, const TrainConfig& config,
                        const Model& initial, const Eigen::VectorXd& sample_weights = {});

/// Argmax class per sample, lowest index on exact ties.
std::vector<Index> predict(const Model& model, const Dataset& dataset, std::size_t batch_size = 64);

ConfusionMatrix confusion_matrix(const Model& model, const Dataset& dataset);

/// Fills the metric fields of a report from predictions on `dataset`.
void score_into(RunReport& report, const Model& model, const Dataset& dataset);

/// Observation points used by tests and diagnostics. Stage names: "baseline",
/// "level-<t>", "shuffle-pretrain", "hierarchy-<k>", "final".
struct PipelineHooks {
  std::function<void(const std::string& stage, const Model& source, const Model& destination)>
      on_transfer;
  std::function<void(const std::string& stage, const Model& initial, const TrainResult& result)>
      on_trained;
};

struct LevelRecord {
  Index level = 0;
  LabelMapping mapping;
  std::size_t best_epoch = 0;
  double best_score = 0;
};

struct TaxoPretrainResult {
  Model model;
  std::vector<LevelRecord> levels;
};

/// Level 1 from scratch on the binary task, then each level fine-tunes the previous
/// model's recurrent cell with a fresh (t+1)-way head.
TaxoPretrainResult taxo_pretrain(const Dataset& train, const Dataset& valid,
                                 std::span<const Index> ranking, const TaxoConfig& taxo,
                                 const TrainConfig& config, const PipelineHooks& hooks = {});

/// Step 1 and Step 2 only: baseline model M0 and the entropy ranking of its
/// validation confusion matrix.
struct RankingResult {
  Model baseline;
  ConfusionMatrix confusion;
  ClassEntropy entropy;
  EntropyRanking ranking;
};

RankingResult compute_ranking(const Split& split, const TrainConfig& config,
                              const PipelineHooks& hooks = {});

MethodOutcome run_baseline(const Split& split, const TrainConfig& config,
                           const PipelineHooks& hooks = {});

MethodOutcome run_taxo(const Split& split, const TrainConfig& config, const TaxoConfig& taxo,
                       const PipelineHooks& hooks = {});

/// Uses `taxo.level_epochs` and `taxo.carry_attention` for the binary pretraining stage.
MethodOutcome run_shuffle_pretrain(const Split& split, const TrainConfig& config,
                                   const TaxoConfig& taxo = {}, const PipelineHooks& hooks = {});

/// Coarse-to-fine class groupings. levels[k][c] is the group of leaf class c at level k.
struct ClassHierarchy {
  std::vector<std::vector<Index>> levels;
  std::vector<std::vector<std::string>> group_names;

  std::size_t depth() const { return levels.size(); }
  /// Throws ConfigError unless every level is total, has >= 2 groups, refines the previous
  /// one, and the last level is the identity.
  void validate(Index num_classes) const;
};

/// Builds a hierarchy from name maps (leaf class name -> group name), coarsest first. An identity
/// level is appended when the last map is not already the identity.
ClassHierarchy make_hierarchy(
    const std::vector<std::vector<std::pair<std::string, std::string>>>& maps,
    const std::vector<std::string>& class_names);

/// JSON: {"levels": [{"leaf": "group", ...}, ...]}, coarsest first.
ClassHierarchy load_hierarchy(const std::filesystem::path& path,
                              const std::vector<std::string>& class_names);

MethodOutcome run_hierarchy_pretrain(const Split& split, const ClassHierarchy& hierarchy,
                                     const TrainConfig& config, const TaxoConfig& taxo = {},
                                     const PipelineHooks& hooks = {});

enum class Method { Baseline, Taxo, TaxoWeighted, Shuffle, Hierarchy };

Method parse_method(const std::string& name);
std::string to_string(Method method);

/// Binds a method and its configuration into a runner for repeated_evaluation. The runner's
/// seed replaces `config.seed`.
MethodRunner make_runner(Method method, const TrainConfig& config, const TaxoConfig& taxo,
                         const ClassHierarchy* hierarchy = nullptr);

}  // namespace taxo
