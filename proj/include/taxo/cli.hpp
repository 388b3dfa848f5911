#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>

#include "taxo/data.hpp"
#include "taxo/eval.hpp"
#include "taxo/pipeline.hpp"

namespace taxo::cli {

/// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

/// Environment variable naming the default output directory.
inline constexpr const char* kOutputDirEnv = "TAXO_OUTPUT_DIR";

struct RunSpec {
  std::filesystem::path dataset;
  DatasetFormat format = DatasetFormat::JsonLines;
  Method method = Method::Baseline;
  std::string preset;  // informational; values are already resolved into `train`
  TrainConfig train;
  TaxoConfig taxo;
  std::optional<std::filesystem::path> hierarchy;
  std::size_t repetitions = 5;
  std::uint64_t base_seed = 0;
  std::filesystem::path output_dir;
  std::size_t parallel_reps = 1;
  bool stratified = false;

  /// Checks fields that need no I/O. Throws ConfigError.
  void validate() const;
};

/// Flat key=value text that, passed back through --config, reproduces the run.
std::string to_config_text(const RunSpec& spec);

struct RunResult {
  RepeatedEvaluation evaluation;
  std::filesystem::path report_path;
  std::filesystem::path manifest_path;
};

/// Validates the spec and its inputs, then runs every repetition and writes
/// report.csv, manifest.json, run.conf and checkpoints/rep-<r>.ckpt under output_dir.
/// Nothing is written when validation fails.
RunResult run(const RunSpec& spec, std::ostream& log);

/// Step 1 and Step 2 on repetition 0's split; prints entropies sorted by rank.
EntropyRanking inspect_ranking(const RunSpec& spec, std::ostream& out);

/// Re-aggregates the per-repetition rows of report CSVs, one line per method.
void report(std::span<const std::filesystem::path> inputs, std::ostream& out);

}  // namespace taxo::cli
