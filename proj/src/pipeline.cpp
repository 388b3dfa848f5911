#include "taxo/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "json.hpp"

#include "taxo/random.hpp"

namespace taxo {

SelectionMetric parse_selection_metric(const std::string& name) {
  if (name == "accuracy") return SelectionMetric::Accuracy;
  if (name == "f_measure" || name == "f-measure") return SelectionMetric::FMeasure;
  throw ConfigError("unknown selection metric '" + name + "'");
}

std::string to_string(SelectionMetric metric) {
  return metric == SelectionMetric::Accuracy ? "accuracy" : "f_measure";
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  // Zero is allowed so that a stage can be replayed without moving the weights.
  if (!(learning_rate >= 0) || !std::isfinite(learning_rate))
    throw ConfigError("learning_rate must be finite and >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (hidden_dim < 1) throw ConfigError("hidden_dim must be >= 1");
  if (!(grad_clip >= 0)) throw ConfigError("grad_clip must be >= 0");
}

Index TaxoConfig::resolved_depth(Index num_classes) const {
  const Index d = depth == 0 ? num_classes - 1 : depth;
  if (d < 1 || d > num_classes - 1)
    throw ConfigError("taxonomy depth " + std::to_string(d) + " outside [1, " +
                      std::to_string(num_classes - 1) + "] for " + std::to_string(num_classes) +
                      " classes");
  return d;
}

TrainConfig preset(const std::string& name) {
  TrainConfig c;
  if (name == "speech") {
    c.cell_kind = CellKind::LSTM;
    c.hidden_dim = 256;
    c.epochs = 250;
  } else if (name == "sits") {
    c.cell_kind = CellKind::GRU;
    c.hidden_dim = 512;
    c.epochs = 1000;
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected speech or sits)");
  }
  return c;
}

// ---------------------------------------------------------------------------

std::vector<Index> predict(const Model& model, const Dataset& dataset, std::size_t batch_size) {
  // Longest first, so each batch is sorted by decreasing length and padding costs nothing.
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dataset.samples[a].length() > dataset.samples[b].length();
  });
  std::vector<Index> out(dataset.size(), 0);
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::span<const std::size_t> idx(order.data() + start,
                                           std::min(batch_size, order.size() - start));
    const Eigen::MatrixXd probs = model_forward(model, pad_batch(dataset, idx));
    for (Index b = 0; b < probs.rows(); ++b) {
      Index best = 0;
      for (Index k = 1; k < probs.cols(); ++k)
        if (probs(b, k) > probs(b, best)) best = k;
      out[idx[static_cast<std::size_t>(b)]] = best;
    }
  }
  return out;
}

ConfusionMatrix confusion_matrix(const Model& model, const Dataset& dataset) {
  if (model.num_classes() != dataset.num_classes)
    throw DimensionError("confusion_matrix: model has " + std::to_string(model.num_classes()) +
                         " classes, dataset " + std::to_string(dataset.num_classes));
  const auto preds = predict(model, dataset);
  const auto labels = dataset.labels();
  return confusion_from_predictions(preds, labels, dataset.num_classes);
}

void score_into(RunReport& report, const Model& model, const Dataset& dataset) {
  const auto preds = predict(model, dataset);
  const auto labels = dataset.labels();
  report.accuracy = accuracy(preds, labels);
  report.f_measure = f_measure(preds, labels, dataset.num_classes, Averaging::Weighted);
  report.f_measure_macro = f_measure(preds, labels, dataset.num_classes, Averaging::Macro);
  report.per_class_f = per_class_f_measure(preds, labels, dataset.num_classes).scores;
}

namespace {

double validation_score(const Model& model, const Dataset& valid, SelectionMetric metric) {
  const auto preds = predict(model, valid);
  const auto labels = valid.labels();
  return metric == SelectionMetric::Accuracy ? accuracy(preds, labels)
                                             : f_measure(preds, labels, valid.num_classes);
}

}  // namespace

TrainResult train_model(const Dataset& train, const Dataset& valid, const TrainConfig& config,
                        const Model& initial, const Eigen::VectorXd& sample_weights) {
  config.validate();
  initial.validate();
  if (train.empty() || valid.empty()) throw ConfigError("train_model: empty train or valid set");
  if (train.num_classes != valid.num_classes || train.dim != valid.dim)
    throw DimensionError("train_model: train and valid disagree on classes or dim");
  if (initial.num_classes() != train.num_classes || initial.input_dim() != train.dim)
    throw DimensionError("train_model: model shape (" + std::to_string(initial.input_dim()) +
                         " -> " + std::to_string(initial.num_classes()) +
                         ") does not match the data (" + std::to_string(train.dim) + " -> " +
                         std::to_string(train.num_classes) + ")");
  if (sample_weights.size() != 0 && sample_weights.size() != static_cast<Index>(train.size()))
    throw DimensionError("train_model: one weight per training sample expected");

  Model model = initial;
  Eigen::VectorXd params = flatten(model);
  AdamState<double> adam(params.size(), config.learning_rate);
  Rng rng(config.seed);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result;
  bool have_best = false;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      // Same batch composition, columns ordered longest first.
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(std::min(
                                                       start + config.batch_size, order.size())));
      std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return train.samples[a].length() > train.samples[b].length();
      });
      const SequenceBatch<double> batch = pad_batch(train, idx);
      std::vector<Index> targets;
      Eigen::VectorXd weights(static_cast<Index>(idx.size()));
      for (std::size_t b = 0; b < idx.size(); ++b) {
        targets.push_back(train.samples[idx[b]].label);
        weights(static_cast<Index>(b)) =
            sample_weights.size() ? sample_weights(static_cast<Index>(idx[b])) : 1.0;
      }
      LossAndGradient<double> lg;
      try {
        lg = model_backward_per_sample(model, batch, targets, weights);
      } catch (const InvalidInputError& e) {
        // Inputs are finite on load, so non-finite activations mean the weights diverged.
        throw DivergenceError(epoch, e.what());
      }
      if (!std::isfinite(lg.loss)) throw DivergenceError(epoch, "non-finite training loss");
      loss_sum += lg.loss * static_cast<double>(idx.size());
      Eigen::VectorXd grad = flatten(lg.gradient);
      if (!all_finite(grad)) throw DivergenceError(epoch, "non-finite gradient");
      if (config.grad_clip > 0) {
        const double norm = grad.norm();
        if (norm > config.grad_clip) grad *= config.grad_clip / norm;
      }
      adam_step<double>(params, grad, adam);
      assign_parameters(model, params);
    }
    const double score = validation_score(model, valid, config.selection_metric);
    result.history.push_back({epoch, loss_sum / static_cast<double>(train.size()), score});
    if (!have_best || score > result.best_score) {
      result.model = model;
      result.best_epoch = epoch;
      result.best_score = score;
      have_best = true;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------

namespace {

Eigen::VectorXd per_sample(const Eigen::VectorXd& class_w, std::span<const Index> labels) {
  Eigen::VectorXd w(static_cast<Index>(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) w(static_cast<Index>(i)) = class_w(labels[i]);
  return w;
}

Eigen::VectorXd task_weights(const Dataset& task_train) {
  const auto labels = task_train.labels();
  return per_sample(class_weights(labels, task_train.num_classes), labels);
}

TrainResult train_stage(const std::string& stage, const Dataset& train, const Dataset& valid,
                        const TrainConfig& config, const Model& initial,
                        const Eigen::VectorXd& weights, const PipelineHooks& hooks) {
  TrainResult r = train_model(train, valid, config, initial, weights);
  if (hooks.on_trained) hooks.on_trained(stage, initial, r);
  return r;
}

Model transfer_stage(const std::string& stage, const Model& source, const TransferSpec& spec,
                     std::uint64_t seed, const PipelineHooks& hooks) {
  Model dest = transfer_recurrent_weights(source, spec, seed);
  if (hooks.on_transfer) hooks.on_transfer(stage, source, dest);
  return dest;
}

std::size_t level_epochs(const TaxoConfig& taxo, const TrainConfig& config) {
  return taxo.level_epochs ? taxo.level_epochs : config.epochs;
}

/// Final stage shared by every pretraining method: transfer into a |C|-way model, train on the
/// original task, score on test.
MethodOutcome finish(const Split& split, const Model& pretrained, const TrainConfig& config,
                     const TaxoConfig& taxo, bool weighted, const PipelineHooks& hooks) {
  const std::uint64_t seed = derive_seed(config.seed, seed_tag::kFinal);
  const Model initial = transfer_stage(
      "final", pretrained, {split.train.num_classes, taxo.carry_attention}, seed, hooks);
  TrainConfig final_config = config;
  final_config.seed = seed;
  const TrainResult trained =
      train_stage("final", split.train, split.valid, final_config, initial,
                  weighted ? task_weights(split.train) : Eigen::VectorXd(), hooks);
  MethodOutcome out{trained.model, {}};
  out.report.epoch_history = trained.history;
  score_into(out.report, trained.model, split.test);
  return out;
}

}  // namespace

TaxoPretrainResult taxo_pretrain(const Dataset& train, const Dataset& valid,
                                 std::span<const Index> ranking, const TaxoConfig& taxo,
                                 const TrainConfig& config, const PipelineHooks& hooks) {
  const Index depth = taxo.resolved_depth(train.num_classes);
  const Eigen::VectorXd original_weights =
      taxo.weighted_loss && taxo.weight_source == WeightSource::OriginalClasses
          ? class_weights(train.labels(), train.num_classes)
          : Eigen::VectorXd();

  TaxoPretrainResult out;
  for (Index level = 1; level <= depth; ++level) {
    const std::string stage = "level-" + std::to_string(level);
    auto [level_train, mapping] = remap_labels_for_level(train, ranking, level);
    const Dataset level_valid = remap_labels_for_level(valid, ranking, level).first;

    const std::uint64_t level_seed =
        derive_seed(config.seed, seed_tag::kLevel + static_cast<std::uint64_t>(level));
    TrainConfig level_config = config;
    level_config.seed = derive_seed(level_seed, 2);
    level_config.epochs = level_epochs(taxo, config);

    const Model initial = level == 1
                              ? init_params(derive_seed(level_seed, 1), train.dim,
                                            config.hidden_dim, level + 1, config.cell_kind)
                              : transfer_stage(stage, out.model, {level + 1, taxo.carry_attention},
                                               derive_seed(level_seed, 1), hooks);

    Eigen::VectorXd weights;
    if (taxo.weighted_loss)
      weights = taxo.weight_source == WeightSource::RemappedTask
                    ? task_weights(level_train)
                    : per_sample(original_weights, train.labels());

    TrainResult r =
        train_stage(stage, level_train, level_valid, level_config, initial, weights, hooks);
    out.levels.push_back({level, std::move(mapping), r.best_epoch, r.best_score});
    out.model = std::move(r.model);
  }
  return out;
}

RankingResult compute_ranking(const Split& split, const TrainConfig& config,
                              const PipelineHooks& hooks) {
  const std::uint64_t seed = derive_seed(config.seed, seed_tag::kBaseline);
  TrainConfig baseline_config = config;
  baseline_config.seed = seed;
  const Model initial = init_params(seed, split.train.dim, config.hidden_dim,
                                    split.train.num_classes, config.cell_kind);
  TrainResult trained =
      train_stage("baseline", split.train, split.valid, baseline_config, initial, {}, hooks);
  RankingResult out;
  out.confusion = confusion_matrix(trained.model, split.valid);
  out.entropy = class_entropy(out.confusion);
  out.ranking = rank_classes(out.entropy.entropies);
  out.baseline = std::move(trained.model);
  return out;
}

MethodOutcome run_baseline(const Split& split, const TrainConfig& config,
                           const PipelineHooks& hooks) {
  // Same seeds as Step 1 of run_taxo, so the baseline model equals its M0.
  const std::uint64_t seed = derive_seed(config.seed, seed_tag::kBaseline);
  TrainConfig baseline_config = config;
  baseline_config.seed = seed;
  const Model initial = init_params(seed, split.train.dim, config.hidden_dim,
                                    split.train.num_classes, config.cell_kind);
  const TrainResult trained =
      train_stage("baseline", split.train, split.valid, baseline_config, initial, {}, hooks);
  MethodOutcome out{trained.model, {}};
  out.report.epoch_history = trained.history;
  score_into(out.report, trained.model, split.test);
  return out;
}

MethodOutcome run_taxo(const Split& split, const TrainConfig& config, const TaxoConfig& taxo,
                       const PipelineHooks& hooks) {
  taxo.resolved_depth(split.train.num_classes);
  RankingResult ranked = compute_ranking(split, config, hooks);
  const TaxoPretrainResult pretrained =
      taxo_pretrain(split.train, split.valid, ranked.ranking.ranking, taxo, config, hooks);
  MethodOutcome out = finish(split, pretrained.model, config, taxo, taxo.weighted_loss, hooks);
  out.report.ranking_used = std::move(ranked.ranking);
  return out;
}

MethodOutcome run_shuffle_pretrain(const Split& split, const TrainConfig& config,
                                   const TaxoConfig& taxo, const PipelineHooks& hooks) {
  const std::uint64_t seed = derive_seed(config.seed, seed_tag::kPretrain);
  const std::uint64_t shuffle_seed = derive_seed(config.seed, seed_tag::kShuffle);
  const Dataset binary_train = make_binary_shuffle_task(
      split.train, shuffle_timesteps(split.train, derive_seed(shuffle_seed, 0)));
  const Dataset binary_valid = make_binary_shuffle_task(
      split.valid, shuffle_timesteps(split.valid, derive_seed(shuffle_seed, 1)));
  TrainConfig pre_config = config;
  pre_config.seed = derive_seed(seed, 2);
  pre_config.epochs = level_epochs(taxo, config);
  const Model initial =
      init_params(derive_seed(seed, 1), split.train.dim, config.hidden_dim, 2, config.cell_kind);
  const TrainResult pre =
      train_stage("shuffle-pretrain", binary_train, binary_valid, pre_config, initial, {}, hooks);
  return finish(split, pre.model, config, taxo, false, hooks);
}

// ---------------------------------------------------------------------------

void ClassHierarchy::validate(Index num_classes) const {
  if (levels.empty()) throw ConfigError("hierarchy has no levels");
  if (group_names.size() != levels.size())
    throw ConfigError("hierarchy: group names missing for some level");
  for (std::size_t k = 0; k < levels.size(); ++k) {
    const auto& level = levels[k];
    const auto groups = static_cast<Index>(group_names[k].size());
    if (static_cast<Index>(level.size()) != num_classes)
      throw ConfigError("hierarchy level " + std::to_string(k + 1) + " is not total over the " +
                        std::to_string(num_classes) + " classes");
    if (groups < 2)
      throw ConfigError("hierarchy level " + std::to_string(k + 1) + " has fewer than 2 groups");
    std::vector<bool> used(static_cast<std::size_t>(groups), false);
    for (Index g : level) {
      if (g < 0 || g >= groups) throw ConfigError("hierarchy: group index out of range");
      used[static_cast<std::size_t>(g)] = true;
    }
    if (std::find(used.begin(), used.end(), false) != used.end())
      throw ConfigError("hierarchy level " + std::to_string(k + 1) + " has an empty group");
    if (k == 0) continue;
    // Refinement: leaves sharing a group here must share a group one level up.
    const auto& coarser = levels[k - 1];
    std::map<Index, Index> parent;
    for (Index c = 0; c < num_classes; ++c) {
      const auto [it, fresh] = parent.try_emplace(level[static_cast<std::size_t>(c)],
                                                  coarser[static_cast<std::size_t>(c)]);
      if (!fresh && it->second != coarser[static_cast<std::size_t>(c)])
        throw ConfigError("hierarchy level " + std::to_string(k + 1) + " does not refine level " +
                          std::to_string(k));
    }
  }
  const auto& last = levels.back();
  for (Index c = 0; c < num_classes; ++c)
    if (last[static_cast<std::size_t>(c)] != c ||
        static_cast<Index>(group_names.back().size()) != num_classes)
      throw ConfigError("hierarchy: final level must be the identity over classes");
}

ClassHierarchy make_hierarchy(
    const std::vector<std::vector<std::pair<std::string, std::string>>>& maps,
    const std::vector<std::string>& class_names) {
  std::map<std::string, Index> class_index;
  for (std::size_t c = 0; c < class_names.size(); ++c)
    class_index[class_names[c]] = static_cast<Index>(c);
  const auto num_classes = static_cast<Index>(class_names.size());

  ClassHierarchy h;
  for (std::size_t k = 0; k < maps.size(); ++k) {
    std::map<Index, std::string> group_of;
    for (const auto& [leaf, group] : maps[k]) {
      const auto it = class_index.find(leaf);
      if (it == class_index.end())
        throw ConfigError("hierarchy level " + std::to_string(k + 1) + ": unknown class '" + leaf +
                          "'");
      if (!group_of.emplace(it->second, group).second)
        throw ConfigError("hierarchy level " + std::to_string(k + 1) + ": class '" + leaf +
                          "' listed twice");
    }
    if (static_cast<Index>(group_of.size()) != num_classes)
      throw ConfigError("hierarchy level " + std::to_string(k + 1) + " is not total over the " +
                        std::to_string(num_classes) + " classes");
    std::set<std::string> unique;
    for (const auto& [c, g] : group_of) unique.insert(g);
    std::vector<std::string> names(unique.begin(), unique.end());
    std::vector<Index> level(static_cast<std::size_t>(num_classes));
    for (const auto& [c, g] : group_of)
      level[static_cast<std::size_t>(c)] =
          static_cast<Index>(std::lower_bound(names.begin(), names.end(), g) - names.begin());
    h.levels.push_back(std::move(level));
    h.group_names.push_back(std::move(names));
  }

  const bool ends_with_identity = [&] {
    if (h.levels.empty() || static_cast<Index>(h.group_names.back().size()) != num_classes)
      return false;
    for (Index c = 0; c < num_classes; ++c)
      if (h.levels.back()[static_cast<std::size_t>(c)] != c) return false;
    return true;
  }();
  if (!ends_with_identity && !h.levels.empty()) {
    // A level with one group per class but different group names is relabelled, not appended.
    if (static_cast<Index>(h.group_names.back().size()) == num_classes) {
      std::vector<Index> identity(static_cast<std::size_t>(num_classes));
      std::iota(identity.begin(), identity.end(), Index{0});
      h.levels.back() = identity;
      h.group_names.back() = class_names;
    } else {
      std::vector<Index> identity(static_cast<std::size_t>(num_classes));
      std::iota(identity.begin(), identity.end(), Index{0});
      h.levels.push_back(std::move(identity));
      h.group_names.push_back(class_names);
    }
  }
  h.validate(num_classes);
  return h;
}

ClassHierarchy load_hierarchy(const std::filesystem::path& path,
                              const std::vector<std::string>& class_names) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open hierarchy file " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string(), 0, std::string("invalid JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("levels") || !doc["levels"].is_array())
    throw ConfigError(path.string() + ": expected an object with a \"levels\" array");
  std::vector<std::vector<std::pair<std::string, std::string>>> maps;
  for (const auto& level : doc["levels"]) {
    if (!level.is_object()) throw ConfigError(path.string() + ": every level must be an object");
    std::vector<std::pair<std::string, std::string>> m;
    for (const auto& [leaf, group] : level.items()) {
      if (!group.is_string())
        throw ConfigError(path.string() + ": group of '" + leaf + "' must be a string");
      m.emplace_back(leaf, group.get<std::string>());
    }
    maps.push_back(std::move(m));
  }
  try {
    return make_hierarchy(maps, class_names);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

MethodOutcome run_hierarchy_pretrain(const Split& split, const ClassHierarchy& hierarchy,
                                     const TrainConfig& config, const TaxoConfig& taxo,
                                     const PipelineHooks& hooks) {
  hierarchy.validate(split.train.num_classes);
  Model current;
  for (std::size_t k = 0; k < hierarchy.depth(); ++k) {
    const std::string stage = "hierarchy-" + std::to_string(k + 1);
    const Dataset level_train = relabel(split.train, hierarchy.levels[k], hierarchy.group_names[k]);
    const Dataset level_valid = relabel(split.valid, hierarchy.levels[k], hierarchy.group_names[k]);
    const auto groups = static_cast<Index>(hierarchy.group_names[k].size());
    const std::uint64_t level_seed =
        derive_seed(derive_seed(config.seed, seed_tag::kPretrain), seed_tag::kLevel + k);
    TrainConfig level_config = config;
    level_config.seed = derive_seed(level_seed, 2);
    level_config.epochs = level_epochs(taxo, config);
    const Model initial = k == 0 ? init_params(derive_seed(level_seed, 1), split.train.dim,
                                               config.hidden_dim, groups, config.cell_kind)
                                 : transfer_stage(stage, current, {groups, taxo.carry_attention},
                                                  derive_seed(level_seed, 1), hooks);
    TrainResult r =
        train_stage(stage, level_train, level_valid, level_config, initial,
                    taxo.weighted_loss ? task_weights(level_train) : Eigen::VectorXd(), hooks);
    current = std::move(r.model);
  }
  return finish(split, current, config, taxo, taxo.weighted_loss, hooks);
}

// ---------------------------------------------------------------------------

Method parse_method(const std::string& name) {
  if (name == "baseline") return Method::Baseline;
  if (name == "taxo") return Method::Taxo;
  if (name == "taxo-weighted") return Method::TaxoWeighted;
  if (name == "shuffle") return Method::Shuffle;
  if (name == "hierarchy") return Method::Hierarchy;
  throw ConfigError("unknown method '" + name +
                    "' (expected baseline, taxo, taxo-weighted, shuffle or hierarchy)");
}

std::string to_string(Method method) {
  switch (method) {
    case Method::Baseline:
      return "baseline";
    case Method::Taxo:
      return "taxo";
    case Method::TaxoWeighted:
      return "taxo-weighted";
    case Method::Shuffle:
      return "shuffle";
    case Method::Hierarchy:
      return "hierarchy";
  }
  return "unknown";
}

MethodRunner make_runner(Method method, const TrainConfig& config, const TaxoConfig& taxo,
                         const ClassHierarchy* hierarchy) {
  if (method == Method::Hierarchy && hierarchy == nullptr)
    throw ConfigError("the hierarchy method needs a class hierarchy");
  std::optional<ClassHierarchy> owned;
  if (hierarchy) owned = *hierarchy;
  return [method, config, taxo, owned](const Split& split, std::uint64_t seed) {
    TrainConfig c = config;
    c.seed = seed;
    TaxoConfig t = taxo;
    switch (method) {
      case Method::Baseline:
        return run_baseline(split, c);
      case Method::Taxo:
        t.weighted_loss = false;
        return run_taxo(split, c, t);
      case Method::TaxoWeighted:
        t.weighted_loss = true;
        return run_taxo(split, c, t);
      case Method::Shuffle:
        return run_shuffle_pretrain(split, c, t);
      case Method::Hierarchy:
        return run_hierarchy_pretrain(split, *owned, c, t);
    }
    throw ConfigError("unknown method");
  };
}

}  // namespace taxo
