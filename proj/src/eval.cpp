#include "taxo/eval.hpp"

#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <istream>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "taxo/random.hpp"

namespace taxo {

namespace {

void check_pairs(std::span<const Index> predictions, std::span<const Index> targets) {
  if (predictions.size() != targets.size())
    throw DimensionError("metrics: " + std::to_string(predictions.size()) + " predictions for " +
                         std::to_string(targets.size()) + " targets");
}

}  // namespace

double accuracy(std::span<const Index> predictions, std::span<const Index> targets) {
  check_pairs(predictions, targets);
  if (targets.empty()) throw InvalidInputError("accuracy of an empty prediction set");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) correct += predictions[i] == targets[i];
  return 100.0 * static_cast<double>(correct) / static_cast<double>(targets.size());
}

PerClassF per_class_f_measure(std::span<const Index> predictions, std::span<const Index> targets,
                              Index num_classes) {
  check_pairs(predictions, targets);
  const ConfusionMatrix cm = confusion_from_predictions(predictions, targets, num_classes);
  PerClassF out{std::vector<double>(static_cast<std::size_t>(num_classes), 0.0),
                std::vector<bool>(static_cast<std::size_t>(num_classes), false)};
  for (Index k = 0; k < num_classes; ++k) {
    const auto tp = static_cast<double>(cm(k, k));
    const auto support = static_cast<double>(cm.row(k).sum());
    const auto predicted = static_cast<double>(cm.col(k).sum());
    if (support == 0 && predicted == 0) {
      out.undefined[static_cast<std::size_t>(k)] = true;
      continue;
    }
    // 2PR/(P+R) == 2 tp / (support + predicted), and is 0 when tp is 0.
    out.scores[static_cast<std::size_t>(k)] = 100.0 * 2.0 * tp / (support + predicted);
  }
  return out;
}

double f_measure(std::span<const Index> predictions, std::span<const Index> targets,
                 Index num_classes, Averaging averaging) {
  const PerClassF per_class = per_class_f_measure(predictions, targets, num_classes);
  if (averaging == Averaging::Macro) {
    double total = 0;
    for (double f : per_class.scores) total += f;
    return total / static_cast<double>(num_classes);
  }
  if (targets.empty()) throw InvalidInputError("f_measure of an empty prediction set");
  std::vector<double> support(static_cast<std::size_t>(num_classes), 0.0);
  for (Index t : targets) support[static_cast<std::size_t>(t)] += 1.0;
  double total = 0;
  for (std::size_t k = 0; k < support.size(); ++k) total += support[k] * per_class.scores[k];
  return total / static_cast<double>(targets.size());
}

MetricSummary summarize(std::span<const double> values) {
  if (values.empty()) throw InvalidInputError("summary of zero values");
  double mean = 0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());
  return {mean, std::sqrt(var)};
}

AggregateReport aggregate(std::span<const RunReport> reports) {
  if (reports.empty()) throw InvalidInputError("aggregate over zero repetitions");
  AggregateReport out;
  out.method = reports.front().method;
  out.repetitions = reports.size();
  std::vector<double> acc, f, fm;
  for (const auto& r : reports) {
    acc.push_back(r.accuracy);
    f.push_back(r.f_measure);
    fm.push_back(r.f_measure_macro);
  }
  out.accuracy = summarize(acc);
  out.f_measure = summarize(f);
  out.f_measure_macro = summarize(fm);
  const std::size_t classes = reports.front().per_class_f.size();
  for (std::size_t k = 0; k < classes; ++k) {
    std::vector<double> column;
    for (const auto& r : reports) {
      if (r.per_class_f.size() != classes)
        throw DimensionError("aggregate: repetitions disagree on the number of classes");
      column.push_back(r.per_class_f[k]);
    }
    out.per_class_f.push_back(summarize(column));
  }
  return out;
}

std::string format_real(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, ptr);
}

namespace {

std::string mean_std(const MetricSummary& s) {
  return format_real(s.mean) + "\xC2\xB1" + format_real(s.std);
}

}  // namespace

void write_report_csv(std::ostream& out, std::span<const RunReport> reports) {
  if (reports.empty()) throw InvalidInputError("report with zero repetitions");
  const std::size_t classes = reports.front().per_class_f.size();
  out << "method,rep,seed,accuracy,f_measure,f_measure_macro";
  for (std::size_t k = 0; k < classes; ++k) out << ",f_class_" << k;
  out << '\n';
  for (const auto& r : reports) {
    out << r.method << ',' << r.repetition << ',' << r.seed << ',' << format_real(r.accuracy) << ','
        << format_real(r.f_measure) << ',' << format_real(r.f_measure_macro);
    for (double f : r.per_class_f) out << ',' << format_real(f);
    out << '\n';
  }
  const AggregateReport agg = aggregate(reports);
  out << agg.method << ",aggregate," << ',' << mean_std(agg.accuracy) << ','
      << mean_std(agg.f_measure) << ',' << mean_std(agg.f_measure_macro);
  for (const auto& s : agg.per_class_f) out << ',' << mean_std(s);
  out << '\n';
}

namespace {

double parse_csv_real(const std::string& text, const std::string& source, std::size_t line) {
  double v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw ParseError(source, line, "not a number: '" + text + "'");
  return v;
}

}  // namespace

std::vector<RunReport> read_report_csv(std::istream& in, const std::string& source) {
  std::vector<RunReport> out;
  std::string line;
  std::size_t lineno = 0;
  std::size_t columns = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    if (fields.size() >= 1 && fields[0] == "method") {
      columns = fields.size();
      if (columns < 6) throw ParseError(source, lineno, "report header too short");
      continue;
    }
    if (columns == 0) throw ParseError(source, lineno, "row before header");
    if (fields.size() != columns)
      throw ParseError(
          source, lineno,
          "expected " + std::to_string(columns) + " fields, got " + std::to_string(fields.size()));
    if (fields[1] == "aggregate") continue;
    RunReport r;
    r.method = fields[0];
    r.repetition = static_cast<std::size_t>(parse_csv_real(fields[1], source, lineno));
    std::uint64_t seed = 0;
    const auto [ptr, ec] =
        std::from_chars(fields[2].data(), fields[2].data() + fields[2].size(), seed);
    if (ec != std::errc() || ptr != fields[2].data() + fields[2].size())
      throw ParseError(source, lineno, "bad seed '" + fields[2] + "'");
    r.seed = seed;
    r.accuracy = parse_csv_real(fields[3], source, lineno);
    r.f_measure = parse_csv_real(fields[4], source, lineno);
    r.f_measure_macro = parse_csv_real(fields[5], source, lineno);
    for (std::size_t k = 6; k < fields.size(); ++k)
      r.per_class_f.push_back(parse_csv_real(fields[k], source, lineno));
    out.push_back(std::move(r));
  }
  return out;
}

std::uint64_t repetition_seed(std::uint64_t base_seed, std::size_t repetition) {
  return derive_seed(base_seed, seed_tag::kRepetition + repetition);
}

RepeatedEvaluation repeated_evaluation(const Dataset& dataset, const std::string& method,
                                       const MethodRunner& runner, std::size_t repetitions,
                                       std::uint64_t base_seed, const SplitRatios& ratios,
                                       bool stratified, std::size_t parallel) {
  if (repetitions < 1) throw ConfigError("repetitions must be >= 1");
  std::vector<std::optional<MethodOutcome>> slots(repetitions);
  auto run_one = [&](std::size_t r) {
    const std::uint64_t seed = repetition_seed(base_seed, r);
    const Split parts = split(dataset, ratios, derive_seed(seed, seed_tag::kSplit), stratified);
    MethodOutcome outcome = runner(parts, seed);
    outcome.report.method = method;
    outcome.report.repetition = r;
    outcome.report.seed = seed;
    slots[r] = std::move(outcome);
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(parallel, repetitions));
  if (workers == 1) {
    for (std::size_t r = 0; r < repetitions; ++r) run_one(r);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t r; (r = next++) < repetitions;) {
          try {
            run_one(r);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  }

  RepeatedEvaluation out;
  std::vector<RunReport> reports;
  for (auto& slot : slots) {
    reports.push_back(slot->report);
    out.outcomes.push_back(std::move(*slot));
  }
  out.aggregate = aggregate(reports);
  return out;
}

}  // namespace taxo
