#include "taxo/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

#include "taxo/random.hpp"

namespace taxo {

namespace {

struct RawSample {
  std::string id;
  std::string label;
  std::vector<std::vector<double>> rows;
  std::size_t line = 0;
};

double parse_real(std::string_view text, const std::string& source, std::size_t line) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r'))
    text.remove_suffix(1);
  double value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw ParseError(source, line, "not a number: '" + std::string(text) + "'");
  if (!std::isfinite(value)) throw ParseError(source, line, "non-finite value");
  return value;
}

std::vector<std::string_view> split_fields(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

std::vector<RawSample> read_jsonl(std::istream& in, const std::string& source) {
  std::vector<RawSample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(source, lineno, std::string("invalid JSON: ") + e.what());
    }
    if (!record.is_object() || !record.contains("id") || !record.contains("label") ||
        !record.contains("series"))
      throw ParseError(source, lineno, "record needs \"id\", \"label\" and \"series\"");
    RawSample raw;
    raw.line = lineno;
    const auto& id = record["id"];
    const auto& label = record["label"];
    raw.id = id.is_string() ? id.get<std::string>() : id.dump();
    if (label.is_string())
      raw.label = label.get<std::string>();
    else if (label.is_number_integer())
      raw.label = label.dump();
    else
      throw ParseError(source, lineno, "label must be a string");
    const auto& series = record["series"];
    if (!series.is_array() || series.empty())
      throw ParseError(source, lineno, "series must be a non-empty array of rows");
    for (const auto& row : series) {
      if (!row.is_array() || row.empty())
        throw ParseError(source, lineno, "every series row must be a non-empty array");
      std::vector<double> values;
      values.reserve(row.size());
      for (const auto& v : row) {
        if (!v.is_number()) throw ParseError(source, lineno, "series values must be numbers");
        const double x = v.get<double>();
        if (!std::isfinite(x)) throw ParseError(source, lineno, "non-finite value");
        values.push_back(x);
      }
      raw.rows.push_back(std::move(values));
    }
    out.push_back(std::move(raw));
  }
  return out;
}

std::vector<RawSample> read_csv(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t lineno = 0;
  std::size_t dim = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto header = split_fields(line, ',');
    if (header.size() < 4 || trim(header[0]) != "id" || trim(header[1]) != "label" ||
        trim(header[2]) != "t")
      throw ParseError(source, lineno, "expected header 'id,label,t,v1,...,vD'");
    dim = header.size() - 3;
    break;
  }
  if (dim == 0) throw ParseError(source, 0, "missing header");

  std::vector<RawSample> out;
  std::unordered_map<std::string, std::size_t> index;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line, ',');
    if (fields.size() != dim + 3)
      throw ParseError(
          source, lineno,
          "expected " + std::to_string(dim + 3) + " fields, got " + std::to_string(fields.size()));
    const std::string id = trim(fields[0]);
    const std::string label = trim(fields[1]);
    std::size_t step = 0;
    const std::string t = trim(fields[2]);
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), step);
    if (ec != std::errc() || ptr != t.data() + t.size())
      throw ParseError(source, lineno, "bad step index '" + t + "'");
    auto [it, fresh] = index.try_emplace(id, out.size());
    if (fresh) out.push_back(RawSample{id, label, {}, lineno});
    RawSample& raw = out[it->second];
    if (raw.label != label) throw ParseError(source, lineno, "sample '" + id + "' changes label");
    if (step != raw.rows.size())
      throw ParseError(source, lineno,
                       "sample '" + id + "' expects step " + std::to_string(raw.rows.size()) +
                           ", got " + std::to_string(step));
    std::vector<double> values;
    values.reserve(dim);
    for (std::size_t k = 0; k < dim; ++k)
      values.push_back(parse_real(fields[k + 3], source, lineno));
    raw.rows.push_back(std::move(values));
  }
  return out;
}

Dataset assemble(std::vector<RawSample> raw, const std::string& source,
                 const LoadOptions& options) {
  if (raw.empty()) throw ParseError(source, 0, "no samples");
  std::vector<std::string> names;
  if (options.class_names) {
    names = *options.class_names;
  } else {
    std::set<std::string> unique;
    for (const auto& r : raw) unique.insert(r.label);
    names.assign(unique.begin(), unique.end());
  }
  std::map<std::string, Index> label_index;
  for (std::size_t k = 0; k < names.size(); ++k) label_index[names[k]] = static_cast<Index>(k);

  Dataset ds;
  ds.class_names = names;
  ds.num_classes = static_cast<Index>(names.size());
  ds.dim = static_cast<Index>(raw.front().rows.front().size());
  std::unordered_set<std::string> seen;
  ds.samples.reserve(raw.size());
  for (auto& r : raw) {
    if (!seen.insert(r.id).second) throw ParseError(source, r.line, "duplicate id '" + r.id + "'");
    const auto found = label_index.find(r.label);
    if (found == label_index.end())
      throw ParseError(source, r.line, "unknown class '" + r.label + "'");
    TimeSeriesSample s;
    s.id = r.id;
    s.label = found->second;
    s.series.resize(static_cast<Index>(r.rows.size()), ds.dim);
    for (std::size_t t = 0; t < r.rows.size(); ++t) {
      if (static_cast<Index>(r.rows[t].size()) != ds.dim)
        throw ParseError(source, r.line,
                         "inconsistent dimensionality: row has " +
                             std::to_string(r.rows[t].size()) + " values, dataset has " +
                             std::to_string(ds.dim));
      for (Index k = 0; k < ds.dim; ++k) s.series(static_cast<Index>(t), k) = r.rows[t][k];
    }
    ds.samples.push_back(std::move(s));
  }
  if (ds.num_classes < 2) throw ParseError(source, 0, "need at least two classes");
  return ds;
}

}  // namespace

std::vector<Index> Dataset::labels() const {
  std::vector<Index> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

std::vector<Index> Dataset::class_counts() const {
  std::vector<Index> counts(static_cast<std::size_t>(num_classes), 0);
  for (const auto& s : samples) ++counts.at(static_cast<std::size_t>(s.label));
  return counts;
}

Dataset Dataset::with_samples(std::vector<TimeSeriesSample> subset) const {
  Dataset out;
  out.samples = std::move(subset);
  out.num_classes = num_classes;
  out.dim = dim;
  out.class_names = class_names;
  return out;
}

void Dataset::validate() const {
  if (num_classes < 2) throw ConfigError("dataset needs at least two classes");
  if (static_cast<Index>(class_names.size()) != num_classes)
    throw ConfigError("dataset class name count differs from num_classes");
  for (const auto& s : samples) {
    if (s.label < 0 || s.label >= num_classes)
      throw IndexError("sample '" + s.id + "' label out of range");
    if (s.series.cols() != dim || s.series.rows() < 1)
      throw DimensionError("sample '" + s.id + "' has shape " + std::to_string(s.series.rows()) +
                           "x" + std::to_string(s.series.cols()) + ", dataset dim " +
                           std::to_string(dim));
    if (!all_finite(s.series))
      throw InvalidInputError("sample '" + s.id + "' has non-finite values");
  }
}

DatasetFormat parse_dataset_format(const std::string& name) {
  if (name == "jsonl" || name == "json") return DatasetFormat::JsonLines;
  if (name == "csv") return DatasetFormat::Csv;
  throw ConfigError("unknown dataset format '" + name + "' (expected jsonl or csv)");
}

Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format,
                     const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string(), 0, "cannot open file");
  const std::string source = path.string();
  auto raw = format == DatasetFormat::JsonLines ? read_jsonl(in, source) : read_csv(in, source);
  return assemble(std::move(raw), source, options);
}

Dataset merge_datasets(const Dataset& first, const Dataset& second) {
  if (first.dim != second.dim)
    throw DimensionError("merge: dims " + std::to_string(first.dim) + " and " +
                         std::to_string(second.dim));
  std::set<std::string> unique(first.class_names.begin(), first.class_names.end());
  unique.insert(second.class_names.begin(), second.class_names.end());
  Dataset out;
  out.class_names.assign(unique.begin(), unique.end());
  out.num_classes = static_cast<Index>(out.class_names.size());
  out.dim = first.dim;
  auto index_of = [&](const std::string& name) {
    return static_cast<Index>(
        std::lower_bound(out.class_names.begin(), out.class_names.end(), name) -
        out.class_names.begin());
  };
  std::unordered_set<std::string> ids;
  for (const Dataset* part : {&first, &second})
    for (const auto& s : part->samples) {
      if (!ids.insert(s.id).second) throw ConfigError("merge: duplicate id '" + s.id + "'");
      TimeSeriesSample copy = s;
      copy.label = index_of(part->class_names.at(static_cast<std::size_t>(s.label)));
      out.samples.push_back(std::move(copy));
    }
  return out;
}

void save_jsonl(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  for (const auto& s : dataset.samples) {
    nlohmann::json series = nlohmann::json::array();
    for (Index t = 0; t < s.series.rows(); ++t) {
      nlohmann::json row = nlohmann::json::array();
      for (Index k = 0; k < s.series.cols(); ++k) row.push_back(s.series(t, k));
      series.push_back(std::move(row));
    }
    nlohmann::json record = {{"id", s.id},
                             {"label", dataset.class_names.at(static_cast<std::size_t>(s.label))},
                             {"series", std::move(series)}};
    out << record.dump() << '\n';
  }
}

namespace {

std::size_t portion(double ratio, std::size_t n) {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
}

}  // namespace

Split split(const Dataset& dataset, const SplitRatios& ratios, std::uint64_t seed,
            bool stratified) {
  if (!(ratios.train > 0 && ratios.valid > 0 && ratios.test > 0) ||
      std::abs(ratios.train + ratios.valid + ratios.test - 1.0) > 1e-9)
    throw ConfigError("split ratios must be positive and sum to 1");

  Rng rng(seed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::size_t> train, valid, test;
  auto deal = [&](const std::vector<std::size_t>& pool) {
    const std::size_t nv = portion(ratios.valid, pool.size());
    const std::size_t nt = portion(ratios.test, pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i)
      (i < nv ? valid : i < nv + nt ? test : train).push_back(pool[i]);
  };
  if (stratified) {
    std::vector<std::vector<std::size_t>> per_class(static_cast<std::size_t>(dataset.num_classes));
    for (std::size_t i : order)
      per_class.at(static_cast<std::size_t>(dataset.samples[i].label)).push_back(i);
    for (const auto& pool : per_class) deal(pool);
  } else {
    deal(order);
  }
  if (train.empty() || valid.empty() || test.empty())
    throw ConfigError("split of " + std::to_string(dataset.size()) +
                      " samples leaves a partition empty");

  auto gather = [&](const std::vector<std::size_t>& idx) {
    std::vector<TimeSeriesSample> subset;
    subset.reserve(idx.size());
    for (std::size_t i : idx) subset.push_back(dataset.samples[i]);
    return dataset.with_samples(std::move(subset));
  };
  return {gather(train), gather(valid), gather(test)};
}

Dataset shuffle_timesteps(const Dataset& dataset, std::uint64_t seed) {
  Dataset out = dataset;
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    auto& s = out.samples[i];
    std::vector<Index> perm(static_cast<std::size_t>(s.length()));
    std::iota(perm.begin(), perm.end(), Index{0});
    Rng rng(derive_seed(seed, i));
    std::shuffle(perm.begin(), perm.end(), rng);
    Eigen::MatrixXd permuted(s.series.rows(), s.series.cols());
    for (std::size_t t = 0; t < perm.size(); ++t)
      permuted.row(static_cast<Index>(t)) = s.series.row(perm[t]);
    s.series = std::move(permuted);
  }
  return out;
}

Dataset make_binary_shuffle_task(const Dataset& original, const Dataset& shuffled) {
  if (original.dim != shuffled.dim)
    throw DimensionError("binary shuffle task: dims " + std::to_string(original.dim) + " and " +
                         std::to_string(shuffled.dim));
  Dataset out;
  out.class_names = {"shuffled", "original"};
  out.num_classes = 2;
  out.dim = original.dim;
  out.samples.reserve(original.size() + shuffled.size());
  for (const auto& s : original.samples) {
    out.samples.push_back(s);
    out.samples.back().label = 1;
  }
  for (const auto& s : shuffled.samples) {
    out.samples.push_back(s);
    out.samples.back().id += "~shuffled";
    out.samples.back().label = 0;
  }
  return out;
}

LabelMapping make_label_mapping(std::span<const Index> ranking, Index level) {
  const auto num_classes = static_cast<Index>(ranking.size());
  if (level < 1 || level > num_classes - 1)
    throw ConfigError("taxonomy level " + std::to_string(level) + " outside [1, " +
                      std::to_string(num_classes - 1) + "]");
  std::vector<bool> seen(ranking.size(), false);
  for (Index c : ranking) {
    if (c < 0 || c >= num_classes || seen[static_cast<std::size_t>(c)])
      throw ConfigError("ranking is not a permutation of the classes");
    seen[static_cast<std::size_t>(c)] = true;
  }
  LabelMapping m;
  m.level = level;
  m.ranking.assign(ranking.begin(), ranking.end());
  m.mapping.assign(ranking.size(), 0);
  for (Index j = 1; j <= level; ++j) m.mapping[static_cast<std::size_t>(ranking[j - 1])] = j;
  return m;
}

Dataset relabel(const Dataset& dataset, std::span<const Index> mapping,
                std::vector<std::string> names) {
  if (static_cast<Index>(mapping.size()) != dataset.num_classes)
    throw ConfigError("relabel: mapping must cover every class");
  const auto target_classes = static_cast<Index>(names.size());
  for (Index k : mapping)
    if (k < 0 || k >= target_classes) throw ConfigError("relabel: mapping target out of range");
  Dataset out = dataset;
  out.class_names = std::move(names);
  out.num_classes = target_classes;
  for (auto& s : out.samples) s.label = mapping[static_cast<std::size_t>(s.label)];
  return out;
}

std::pair<Dataset, LabelMapping> remap_labels_for_level(const Dataset& dataset,
                                                        std::span<const Index> ranking,
                                                        Index level) {
  if (static_cast<Index>(ranking.size()) != dataset.num_classes)
    throw ConfigError("ranking length differs from the number of classes");
  LabelMapping m = make_label_mapping(ranking, level);
  std::vector<std::string> names{"rest"};
  for (Index j = 1; j <= level; ++j)
    names.push_back(dataset.class_names.at(static_cast<std::size_t>(ranking[j - 1])));
  return {relabel(dataset, m.mapping, std::move(names)), std::move(m)};
}

Eigen::VectorXd class_weights(std::span<const Index> labels, Index num_classes) {
  std::vector<double> counts(static_cast<std::size_t>(num_classes), 0.0);
  for (Index k : labels) {
    if (k < 0 || k >= num_classes) throw IndexError("class_weights: label out of range");
    counts[static_cast<std::size_t>(k)] += 1.0;
  }
  const auto n = static_cast<double>(labels.size());
  Eigen::VectorXd w(num_classes);
  for (Index k = 0; k < num_classes; ++k) {
    const double c = counts[static_cast<std::size_t>(k)];
    if (c == 0) throw ConfigError("class_weights: class " + std::to_string(k) + " has no samples");
    w(k) = n / (static_cast<double>(num_classes) * c);
  }
  return w;
}

SequenceBatch<double> pad_batch(std::span<const TimeSeriesSample* const> samples) {
  if (samples.empty()) throw InvalidInputError("pad_batch: no samples");
  const Index dim = samples.front()->series.cols();
  Index longest = 0;
  for (const auto* s : samples) {
    if (s->series.cols() != dim) throw DimensionError("pad_batch: samples differ in dim");
    longest = std::max(longest, s->length());
  }
  const auto n = static_cast<Index>(samples.size());
  SequenceBatch<double> batch;
  batch.steps.assign(static_cast<std::size_t>(longest), Eigen::MatrixXd::Zero(dim, n));
  batch.mask.setConstant(n, longest, false);
  for (Index b = 0; b < n; ++b) {
    const auto& series = samples[static_cast<std::size_t>(b)]->series;
    for (Index t = 0; t < series.rows(); ++t) {
      batch.steps[static_cast<std::size_t>(t)].col(b) = series.row(t).transpose();
      batch.mask(b, t) = true;
    }
  }
  return batch;
}

SequenceBatch<double> pad_batch(const Dataset& dataset, std::span<const std::size_t> indices) {
  std::vector<const TimeSeriesSample*> ptrs;
  ptrs.reserve(indices.size());
  for (std::size_t i : indices) ptrs.push_back(&dataset.samples.at(i));
  return pad_batch(ptrs);
}

Eigen::MatrixXd unpad(const SequenceBatch<double>& batch, Index b) {
  std::vector<Index> real;
  for (Index t = 0; t < batch.num_steps(); ++t)
    if (batch.mask(b, t)) real.push_back(t);
  Eigen::MatrixXd out(static_cast<Index>(real.size()), batch.input_dim());
  for (std::size_t i = 0; i < real.size(); ++i)
    out.row(static_cast<Index>(i)) =
        batch.steps[static_cast<std::size_t>(real[i])].col(b).transpose();
  return out;
}

}  // namespace taxo
