#include "taxo/cli.hpp"

#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "json.hpp"

#include "taxo/checkpoint.hpp"
#include "taxo/random.hpp"

namespace taxo::cli {

namespace {

std::string format_name(DatasetFormat f) { return f == DatasetFormat::Csv ? "csv" : "jsonl"; }

std::string weight_source_name(WeightSource s) {
  return s == WeightSource::RemappedTask ? "remapped" : "original";
}

}  // namespace

void RunSpec::validate() const {
  if (dataset.empty()) throw ConfigError("--dataset is required");
  if (repetitions < 1) throw ConfigError("--reps must be >= 1");
  if (parallel_reps < 1) throw ConfigError("--parallel-reps must be >= 1");
  if (!(train.learning_rate > 0)) throw ConfigError("--lr must be > 0");
  train.validate();
  if (taxo.depth < 0) throw ConfigError("--depth must be >= 0");
  if (method == Method::Hierarchy && !hierarchy)
    throw ConfigError("method 'hierarchy' requires --hierarchy");
  if (method != Method::Hierarchy && hierarchy)
    throw ConfigError("--hierarchy is only valid with method 'hierarchy'");
  if (output_dir.empty())
    throw ConfigError("no output directory (--out or $" + std::string(kOutputDirEnv) + ")");
}

std::string to_config_text(const RunSpec& spec) {
  std::ostringstream out;
  out << "dataset=" << spec.dataset.string() << '\n'
      << "format=" << format_name(spec.format) << '\n'
      << "method=" << to_string(spec.method) << '\n'
      << "epochs=" << spec.train.epochs << '\n'
      << "lr=" << format_real(spec.train.learning_rate) << '\n'
      << "batch=" << spec.train.batch_size << '\n'
      << "hidden=" << spec.train.hidden_dim << '\n'
      << "cell=" << to_string(spec.train.cell_kind) << '\n'
      << "selection=" << to_string(spec.train.selection_metric) << '\n'
      << "grad-clip=" << format_real(spec.train.grad_clip) << '\n'
      << "depth=" << spec.taxo.depth << '\n'
      << "level-epochs=" << spec.taxo.level_epochs << '\n'
      << "carry-attention=" << (spec.taxo.carry_attention ? "true" : "false") << '\n'
      << "weight-source=" << weight_source_name(spec.taxo.weight_source) << '\n'
      << "stratified=" << (spec.stratified ? "true" : "false") << '\n'
      << "reps=" << spec.repetitions << '\n'
      << "seed=" << spec.base_seed << '\n';
  if (spec.hierarchy) out << "hierarchy=" << spec.hierarchy->string() << '\n';
  return out.str();
}

namespace {

struct PreparedInputs {
  Dataset dataset;
  std::optional<ClassHierarchy> hierarchy;
};

PreparedInputs prepare(const RunSpec& spec) {
  spec.validate();
  PreparedInputs in;
  in.dataset = load_dataset(spec.dataset, spec.format);
  in.dataset.validate();
  if (spec.hierarchy) in.hierarchy = load_hierarchy(*spec.hierarchy, in.dataset.class_names);
  if (spec.method == Method::Taxo || spec.method == Method::TaxoWeighted)
    spec.taxo.resolved_depth(in.dataset.num_classes);
  // Surfaces empty partitions before any training.
  split(in.dataset, {}, derive_seed(repetition_seed(spec.base_seed, 0), seed_tag::kSplit),
        spec.stratified);
  return in;
}

nlohmann::json manifest(const RunSpec& spec, const Dataset& dataset,
                        const RepeatedEvaluation& eval) {
  nlohmann::json doc;
  doc["manifest_version"] = 1;
  doc["method"] = to_string(spec.method);
  doc["dataset"] = {{"path", spec.dataset.string()},
                    {"format", format_name(spec.format)},
                    {"samples", dataset.size()},
                    {"dim", dataset.dim},
                    {"classes", dataset.class_names}};
  doc["config"] = {{"preset", spec.preset},
                   {"epochs", spec.train.epochs},
                   {"learning_rate", spec.train.learning_rate},
                   {"batch_size", spec.train.batch_size},
                   {"hidden_dim", spec.train.hidden_dim},
                   {"cell", to_string(spec.train.cell_kind)},
                   {"selection_metric", to_string(spec.train.selection_metric)},
                   {"grad_clip", spec.train.grad_clip},
                   {"depth", spec.taxo.depth},
                   {"level_epochs", spec.taxo.level_epochs},
                   {"carry_attention", spec.taxo.carry_attention},
                   {"weight_source", weight_source_name(spec.taxo.weight_source)},
                   {"split", {{"train", 0.5}, {"valid", 0.2}, {"test", 0.3}}},
                   {"stratified", spec.stratified},
                   {"adam", {{"beta1", 0.9}, {"beta2", 0.999}, {"epsilon", 1e-8}}}};
  if (spec.hierarchy) doc["config"]["hierarchy"] = spec.hierarchy->string();
  doc["base_seed"] = spec.base_seed;
  doc["std"] = "population";
  nlohmann::json reps = nlohmann::json::array();
  for (const auto& o : eval.outcomes) {
    nlohmann::json rep = {
        {"rep", o.report.repetition},
        {"seed", o.report.seed},
        {"split_seed", derive_seed(o.report.seed, seed_tag::kSplit)},
        {"checkpoint", "checkpoints/rep-" + std::to_string(o.report.repetition) + ".ckpt"}};
    if (o.report.ranking_used) {
      rep["ranking"] = o.report.ranking_used->ranking;
      std::vector<double> h(
          o.report.ranking_used->entropies.data(),
          o.report.ranking_used->entropies.data() + o.report.ranking_used->entropies.size());
      rep["entropies"] = h;
    }
    reps.push_back(std::move(rep));
  }
  doc["repetitions"] = std::move(reps);
  return doc;
}

}  // namespace

RunResult run(const RunSpec& spec, std::ostream& log) {
  const PreparedInputs in = prepare(spec);
  const MethodRunner runner =
      make_runner(spec.method, spec.train, spec.taxo, in.hierarchy ? &*in.hierarchy : nullptr);
  log << "running " << to_string(spec.method) << " on " << spec.dataset.string() << " ("
      << in.dataset.size() << " samples, " << in.dataset.num_classes << " classes), "
      << spec.repetitions << " repetition(s)\n";

  RunResult result;
  result.evaluation =
      repeated_evaluation(in.dataset, to_string(spec.method), runner, spec.repetitions,
                          spec.base_seed, {}, spec.stratified, spec.parallel_reps);

  namespace fs = std::filesystem;
  fs::create_directories(spec.output_dir / "checkpoints");
  std::vector<RunReport> reports;
  for (const auto& o : result.evaluation.outcomes) {
    reports.push_back(o.report);
    save_checkpoint(
        spec.output_dir / "checkpoints" / ("rep-" + std::to_string(o.report.repetition) + ".ckpt"),
        o.final_model);
  }
  result.report_path = spec.output_dir / "report.csv";
  {
    std::ofstream out(result.report_path, std::ios::binary);
    write_report_csv(out, reports);
  }
  result.manifest_path = spec.output_dir / "manifest.json";
  {
    std::ofstream out(result.manifest_path, std::ios::binary);
    out << manifest(spec, in.dataset, result.evaluation).dump(2) << '\n';
  }
  {
    std::ofstream out(spec.output_dir / "run.conf", std::ios::binary);
    out << to_config_text(spec);
  }

  const auto& agg = result.evaluation.aggregate;
  log << std::fixed << std::setprecision(2) << agg.method << ": accuracy " << agg.accuracy.mean
      << " +/- " << agg.accuracy.std << ", f-measure " << agg.f_measure.mean << " +/- "
      << agg.f_measure.std << " (population std over " << agg.repetitions << " reps)\n"
      << "wrote " << result.report_path.string() << '\n';
  return result;
}

EntropyRanking inspect_ranking(const RunSpec& spec, std::ostream& out) {
  const PreparedInputs in = prepare(spec);
  const std::uint64_t seed = repetition_seed(spec.base_seed, 0);
  const Split parts = split(in.dataset, {}, derive_seed(seed, seed_tag::kSplit), spec.stratified);
  TrainConfig config = spec.train;
  config.seed = seed;
  const RankingResult r = compute_ranking(parts, config);
  out << "rank,class,name,entropy,valid_support\n";
  for (std::size_t pos = 0; pos < r.ranking.ranking.size(); ++pos) {
    const Index c = r.ranking.ranking[pos];
    out << pos + 1 << ',' << c << ',' << in.dataset.class_names[static_cast<std::size_t>(c)] << ','
        << format_real(r.ranking.entropies(c)) << ',' << r.confusion.row(c).sum() << '\n';
  }
  for (Index c : r.entropy.empty_rows)
    out << "# warning: class " << c << " has no validation samples; entropy set to 0\n";
  return r.ranking;
}

void report(std::span<const std::filesystem::path> inputs, std::ostream& out) {
  if (inputs.empty()) throw ConfigError("report needs at least one CSV file");
  std::map<std::string, std::vector<RunReport>> by_method;
  for (const auto& path : inputs) {
    std::ifstream in(path);
    if (!in) throw ParseError(path.string(), 0, "cannot open report");
    for (auto& r : read_report_csv(in, path.string())) by_method[r.method].push_back(std::move(r));
  }
  out << "method,reps,accuracy_mean,accuracy_std,f_measure_mean,f_measure_std,"
         "f_measure_macro_mean,f_measure_macro_std\n";
  for (const auto& [method, reports] : by_method) {
    const AggregateReport a = aggregate(reports);
    out << method << ',' << a.repetitions << ',' << format_real(a.accuracy.mean) << ','
        << format_real(a.accuracy.std) << ',' << format_real(a.f_measure.mean) << ','
        << format_real(a.f_measure.std) << ',' << format_real(a.f_measure_macro.mean) << ','
        << format_real(a.f_measure_macro.std) << '\n';
  }
}

}  // namespace taxo::cli
