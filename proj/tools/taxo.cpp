// Command-line entry point: run, inspect-ranking, report.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "taxo/cli.hpp"

namespace {

struct RawOptions {
  std::string config, dataset, format = "jsonl", method = "baseline", preset, cell, selection,
                               weight_source = "remapped", hierarchy, out;
  std::size_t epochs = 0, batch = 0, level_epochs = 0, reps = 5, parallel_reps = 1;
  long hidden = 0, depth = 3;
  double lr = 0, grad_clip = 0;
  std::uint64_t seed = 0;
  bool carry_attention = false, stratified = false;
};

struct Bound {
  CLI::Option *epochs, *lr, *batch, *hidden, *cell, *selection;
};

Bound add_run_options(CLI::App& app, RawOptions& o) {
  app.add_option("--config", o.config, "flat key=value file; command-line flags override it");
  app.add_option("--dataset", o.dataset, "dataset file (required)");
  app.add_option("--format", o.format, "jsonl or csv")->check(CLI::IsMember({"jsonl", "csv"}));
  app.add_option("--method", o.method, "baseline | taxo | taxo-weighted | shuffle | hierarchy");
  app.add_option("--preset", o.preset, "speech (LSTM 256, 250 epochs) or sits (GRU 512, 1000)")
      ->check(CLI::IsMember({"speech", "sits"}));
  Bound b;
  b.epochs = app.add_option("--epochs", o.epochs, "training epochs");
  b.lr = app.add_option("--lr", o.lr, "Adam learning rate (default 5e-4)");
  b.batch = app.add_option("--batch", o.batch, "batch size (default 32)");
  b.hidden = app.add_option("--hidden", o.hidden, "hidden units");
  b.cell = app.add_option("--cell", o.cell, "gru or lstm")->check(CLI::IsMember({"gru", "lstm"}));
  b.selection = app.add_option("--selection", o.selection, "accuracy or f_measure")
                    ->check(CLI::IsMember({"accuracy", "f_measure"}));
  app.add_option("--seed", o.seed, "base seed");
  app.add_option("--grad-clip", o.grad_clip, "global gradient-norm cap, 0 = off");
  app.add_option("--depth", o.depth, "taxonomy depth, 0 = |C|-1 (default 3)");
  app.add_option("--level-epochs", o.level_epochs, "epochs per pretraining level, 0 = --epochs");
  app.add_flag("--carry-attention", o.carry_attention, "transfer attention weights with the cell");
  app.add_option("--weight-source", o.weight_source,
                 "class counts for weighted pretraining: remapped or original")
      ->check(CLI::IsMember({"remapped", "original"}));
  app.add_option("--hierarchy", o.hierarchy, "hierarchy JSON (method hierarchy)");
  app.add_option("--reps", o.reps, "repetitions (default 5)");
  app.add_option("--out", o.out, "output directory (default $TAXO_OUTPUT_DIR)");
  app.add_option("--parallel-reps", o.parallel_reps, "repetitions run concurrently");
  app.add_flag("--stratified", o.stratified, "stratified instead of plain random split");
  return b;
}

// Keys name long options without the dashes; values only fill options absent from the command line.
void apply_config_file(CLI::App& app, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw taxo::ConfigError("cannot open config file " + path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw taxo::ParseError(path, line_no, "expected key=value");
    const std::string key = CLI::detail::trim_copy(line.substr(0, eq));
    const std::string value = CLI::detail::trim_copy(line.substr(eq + 1));
    CLI::Option* opt = app.get_option_no_throw("--" + key);
    if (opt == nullptr || key == "config")
      throw taxo::ParseError(path, line_no, "unknown key '" + key + "'");
    if (opt->count() > 0) continue;
    try {
      opt->add_result(value);
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw taxo::ParseError(path, line_no, key + ": " + e.what());
    }
  }
}

taxo::cli::RunSpec resolve(const RawOptions& o, const Bound& b) {
  taxo::cli::RunSpec spec;
  spec.dataset = o.dataset;
  spec.format = taxo::parse_dataset_format(o.format);
  spec.method = taxo::parse_method(o.method);
  spec.preset = o.preset;
  spec.train = o.preset.empty() ? taxo::TrainConfig{} : taxo::preset(o.preset);
  if (b.epochs->count()) spec.train.epochs = o.epochs;
  if (b.lr->count()) spec.train.learning_rate = o.lr;
  if (b.batch->count()) spec.train.batch_size = o.batch;
  if (b.hidden->count()) spec.train.hidden_dim = o.hidden;
  if (b.cell->count()) spec.train.cell_kind = taxo::parse_cell_kind(o.cell);
  if (b.selection->count()) spec.train.selection_metric = taxo::parse_selection_metric(o.selection);
  spec.train.grad_clip = o.grad_clip;
  spec.taxo.depth = o.depth;
  spec.taxo.level_epochs = o.level_epochs;
  spec.taxo.carry_attention = o.carry_attention;
  spec.taxo.weight_source = o.weight_source == "original" ? taxo::WeightSource::OriginalClasses
                                                          : taxo::WeightSource::RemappedTask;
  if (!o.hierarchy.empty()) spec.hierarchy = o.hierarchy;
  spec.repetitions = o.reps;
  spec.base_seed = o.seed;
  spec.parallel_reps = o.parallel_reps;
  spec.stratified = o.stratified;
  if (!o.out.empty()) {
    spec.output_dir = o.out;
  } else if (const char* env = std::getenv(taxo::cli::kOutputDirEnv)) {
    spec.output_dir = env;
  }
  return spec;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Level-wise supervised pretraining for recurrent sequence classifiers"};
  app.require_subcommand(1);

  RawOptions run_opts, inspect_opts;
  auto* run_cmd = app.add_subcommand("run", "run a method with repeated evaluation");
  const Bound run_bound = add_run_options(*run_cmd, run_opts);
  auto* inspect_cmd =
      app.add_subcommand("inspect-ranking", "train the baseline and print the entropy ranking");
  const Bound inspect_bound = add_run_options(*inspect_cmd, inspect_opts);
  inspect_opts.out = ".";

  std::vector<std::string> report_inputs;
  auto* report_cmd = app.add_subcommand("report", "re-aggregate report CSVs");
  report_cmd->add_option("files", report_inputs, "report CSV files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? taxo::cli::kExitOk : taxo::cli::kExitValidation;
  }

  try {
    if (*run_cmd && !run_opts.config.empty()) apply_config_file(*run_cmd, run_opts.config);
    if (*inspect_cmd && !inspect_opts.config.empty())
      apply_config_file(*inspect_cmd, inspect_opts.config);
    if (*run_cmd) {
      taxo::cli::run(resolve(run_opts, run_bound), std::cout);
    } else if (*inspect_cmd) {
      taxo::cli::inspect_ranking(resolve(inspect_opts, inspect_bound), std::cout);
    } else if (*report_cmd) {
      std::vector<std::filesystem::path> paths(report_inputs.begin(), report_inputs.end());
      taxo::cli::report(paths, std::cout);
    }
  } catch (const taxo::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return taxo::cli::kExitValidation;
  } catch (const taxo::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return taxo::cli::kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return taxo::cli::kExitRuntime;
  }
  return taxo::cli::kExitOk;
}
