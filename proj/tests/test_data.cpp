#include <algorithm>
#include <filesystem>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"

#include "taxo/data.hpp"
#include "taxo/synthetic.hpp"

using namespace taxo;

namespace {

const std::filesystem::path kFixtures = TAXO_FIXTURE_DIR;
const std::filesystem::path kData = TAXO_DATA_DIR;

std::set<std::string> ids(const Dataset& ds) {
  std::set<std::string> out;
  for (const auto& s : ds.samples) out.insert(s.id);
  return out;
}

std::vector<std::vector<double>> sorted_rows(const Eigen::MatrixXd& m) {
  std::vector<std::vector<double>> rows;
  for (Index t = 0; t < m.rows(); ++t) {
    std::vector<double> r(static_cast<std::size_t>(m.cols()));
    for (Index d = 0; d < m.cols(); ++d) r[static_cast<std::size_t>(d)] = m(t, d);
    rows.push_back(std::move(r));
  }
  std::sort(rows.begin(), rows.end());
  return rows;
}

Dataset sequential(std::size_t n, Index length = 4) {
  Dataset ds;
  ds.num_classes = 2;
  ds.dim = 1;
  ds.class_names = {"a", "b"};
  for (std::size_t i = 0; i < n; ++i) {
    TimeSeriesSample s;
    s.id = "s" + std::to_string(i);
    s.label = static_cast<Index>(i % 2);
    s.series = Eigen::VectorXd::LinSpaced(length, 0, static_cast<double>(length - 1));
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace

TEST_CASE("load_dataset reads the three-sample fixture") {
  const Dataset ds = load_dataset(kFixtures / "three_samples.jsonl", DatasetFormat::JsonLines);
  CHECK(ds.size() == 3);
  CHECK(ds.num_classes == 2);
  CHECK(ds.dim == 2);
  CHECK(ds.class_names == std::vector<std::string>{"cat", "dog"});
  CHECK(ds.labels() == std::vector<Index>{0, 1, 0});
  CHECK(ds.samples[0].length() == 3);
  CHECK(ds.samples[0].series(2, 1) == 0.8);
  ds.validate();
}

TEST_CASE("load_dataset reads the CSV fixture identically") {
  const Dataset a = load_dataset(kFixtures / "three_samples.jsonl", DatasetFormat::JsonLines);
  const Dataset b = load_dataset(kFixtures / "three_samples.csv", DatasetFormat::Csv);
  REQUIRE(a.size() == b.size());
  CHECK(a.class_names == b.class_names);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.samples[i].id == b.samples[i].id);
    CHECK(a.samples[i].label == b.samples[i].label);
    CHECK(a.samples[i].series == b.samples[i].series);
  }
}

TEST_CASE("load_dataset rejects non-finite values with the line number") {
  for (auto [file, format] : {std::pair{"nan.jsonl", DatasetFormat::JsonLines},
                              std::pair{"nan.csv", DatasetFormat::Csv}}) {
    CAPTURE(file);
    try {
      load_dataset(kFixtures / file, format);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 3);
      CHECK(std::string(e.what()).find(":3:") != std::string::npos);
    }
  }
}

TEST_CASE("load_dataset rejects inconsistent dimensionality and unknown classes") {
  CHECK_THROWS_AS(load_dataset(kFixtures / "ragged.jsonl", DatasetFormat::JsonLines), ParseError);
  LoadOptions opts;
  opts.class_names = std::vector<std::string>{"cat"};
  CHECK_THROWS_AS(load_dataset(kFixtures / "three_samples.jsonl", DatasetFormat::JsonLines, opts),
                  ParseError);
  CHECK_THROWS_AS(load_dataset(kFixtures / "missing.jsonl", DatasetFormat::JsonLines), Error);
}

TEST_CASE("merge_datasets unions class names and rejects duplicate ids") {
  const Dataset a = load_dataset(kFixtures / "three_samples.jsonl", DatasetFormat::JsonLines);
  Dataset b = a;
  for (auto& s : b.samples) s.id += "-copy";
  CHECK(merge_datasets(a, b).size() == 6);
  Dataset c = b;
  c.class_names = {"ant", "cat"};
  const Dataset m = merge_datasets(a, c);
  CHECK(m.class_names == std::vector<std::string>{"ant", "cat", "dog"});
  CHECK(m.samples[0].label == 1);
  CHECK(m.samples[3].label == 0);
  CHECK_THROWS_AS(merge_datasets(a, a), ConfigError);
}

TEST_CASE("save_jsonl round trips") {
  const Dataset a = load_dataset(kFixtures / "three_samples.jsonl", DatasetFormat::JsonLines);
  const auto path = std::filesystem::temp_directory_path() / "taxo_test_roundtrip.jsonl";
  save_jsonl(a, path);
  const Dataset b = load_dataset(path, DatasetFormat::JsonLines);
  std::filesystem::remove(path);
  REQUIRE(b.size() == a.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.samples[i].series == b.samples[i].series);
}

TEST_CASE("Japanese Vowels loader fixture") {
  const auto path = kData / "japanese_vowels.jsonl";
  if (!std::filesystem::exists(path)) {
    MESSAGE("data/japanese_vowels.jsonl not present; skipped");
    return;
  }
  const Dataset ds = load_dataset(path, DatasetFormat::JsonLines);
  CHECK(ds.size() == 640);
  CHECK(ds.dim == 12);
  CHECK(ds.num_classes == 9);
  Index lo = 1000, hi = 0, total = 0;
  for (const auto& s : ds.samples) {
    lo = std::min(lo, s.length());
    hi = std::max(hi, s.length());
    total += s.length();
  }
  CHECK(lo == 7);
  CHECK(hi == 29);
  CHECK(total / 640 == 15);
}

TEST_CASE("split sizes and partition") {
  const Dataset ds = sequential(10);
  const Split s = split(ds, {}, 1);
  CHECK(s.train.size() == 5);
  CHECK(s.valid.size() == 2);
  CHECK(s.test.size() == 3);

  for (std::size_t n = 10; n < 60; n += 7)
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const Dataset d = sequential(n);
      const Split p = split(d, {}, seed);
      const auto a = ids(p.train), b = ids(p.valid), c = ids(p.test);
      std::set<std::string> all;
      all.insert(a.begin(), a.end());
      all.insert(b.begin(), b.end());
      all.insert(c.begin(), c.end());
      CHECK(all == ids(d));
      CHECK(a.size() + b.size() + c.size() == n);
      CHECK(b.size() == static_cast<std::size_t>(0.2 * static_cast<double>(n) + 1e-9));
      CHECK(c.size() == static_cast<std::size_t>(0.3 * static_cast<double>(n) + 1e-9));
    }
}

TEST_CASE("split is seed deterministic") {
  const Dataset ds = sequential(40);
  CHECK(ids(split(ds, {}, 7).test) == ids(split(ds, {}, 7).test));
  std::vector<std::string> order_a, order_b;
  for (const auto& s : split(ds, {}, 7).train.samples) order_a.push_back(s.id);
  for (const auto& s : split(ds, {}, 8).train.samples) order_b.push_back(s.id);
  CHECK(order_a != order_b);
}

TEST_CASE("split rejects bad ratios and empty parts") {
  CHECK_THROWS_AS(split(sequential(10), {0.5, 0.5, 0.5}, 1), ConfigError);
  CHECK_THROWS_AS(split(sequential(10), {0.9, -0.1, 0.2}, 1), ConfigError);
  CHECK_THROWS_AS(split(sequential(3), {}, 1), ConfigError);
}

TEST_CASE("stratified split keeps each class present") {
  const Dataset ds = synthetic::blobs(10, 3, 2, 3, 5, 0.1, 4);
  const Split s = split(ds, {}, 3, true);
  for (const Dataset* part : {&s.train, &s.valid, &s.test})
    for (Index c : part->class_counts()) CHECK(c > 0);
}

TEST_CASE("shuffle_timesteps") {
  Dataset one = sequential(3, 1);
  const Dataset same = shuffle_timesteps(one, 5);
  for (std::size_t i = 0; i < one.size(); ++i)
    CHECK(same.samples[i].series == one.samples[i].series);

  const Dataset ds = synthetic::blobs(5, 2, 3, 10, 10, 1.0, 9);
  const Dataset sh = shuffle_timesteps(ds, 5);
  REQUIRE(sh.size() == ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(sh.samples[i].label == ds.samples[i].label);
    CHECK(sh.samples[i].id == ds.samples[i].id);
    CHECK(sorted_rows(sh.samples[i].series) == sorted_rows(ds.samples[i].series));
  }

  // Identical T=10 samples must receive different permutations.
  const Dataset twins = sequential(2, 10);
  const Dataset shuffled = shuffle_timesteps(twins, 11);
  CHECK(shuffled.samples[0].series != shuffled.samples[1].series);
  CHECK(shuffle_timesteps(twins, 11).samples[0].series == shuffled.samples[0].series);
}

TEST_CASE("make_binary_shuffle_task") {
  const Dataset ds = synthetic::blobs(7, 3, 2, 4, 6, 1.0, 1);
  Dataset skewed = ds;
  skewed.samples.resize(10);  // unbalanced original classes
  for (const Dataset* d : std::initializer_list<const Dataset*>{&ds, &skewed}) {
    const Dataset task = make_binary_shuffle_task(*d, shuffle_timesteps(*d, 2));
    CHECK(task.size() == 2 * d->size());
    CHECK(task.num_classes == 2);
    CHECK(task.class_counts() ==
          std::vector<Index>{static_cast<Index>(d->size()), static_cast<Index>(d->size())});
    std::vector<TimeSeriesSample> kept;
    for (const auto& s : task.samples)
      if (s.label == 1) kept.push_back(s);
    REQUIRE(kept.size() == d->size());
    for (std::size_t i = 0; i < kept.size(); ++i) {
      CHECK(kept[i].id == d->samples[i].id);
      CHECK(kept[i].series == d->samples[i].series);
    }
  }
  Dataset other = ds;
  other.dim = 5;
  CHECK_THROWS_AS(make_binary_shuffle_task(ds, other), DimensionError);
}

TEST_CASE("remap_labels_for_level") {
  const std::vector<Index> ranking{2, 0, 1};
  const auto l1 = make_label_mapping(ranking, 1);
  CHECK(l1.mapping == std::vector<Index>{0, 0, 1});
  const auto l2 = make_label_mapping(ranking, 2);
  CHECK(l2.mapping == std::vector<Index>{2, 0, 1});
  CHECK(l2.num_labels() == 3);

  CHECK_THROWS_AS(make_label_mapping(ranking, 0), ConfigError);
  CHECK_THROWS_AS(make_label_mapping(ranking, 3), ConfigError);
  const std::vector<Index> not_perm{0, 0, 1};
  CHECK_THROWS_AS(make_label_mapping(not_perm, 1), ConfigError);

  const Dataset ds = synthetic::blobs(3, 3, 2, 2, 4, 1.0, 6);
  const auto [level, mapping] = remap_labels_for_level(ds, ranking, 2);
  CHECK(level.num_classes == 3);
  CHECK(level.class_names[0] == "rest");
  REQUIRE(level.size() == ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(level.samples[i].id == ds.samples[i].id);
    CHECK(level.samples[i].series == ds.samples[i].series);
    CHECK(level.samples[i].label == mapping(ds.samples[i].label));
  }
}

TEST_CASE("remap at the deepest level leaves one class in the rest group") {
  std::mt19937_64 rng(3);
  for (Index k = 2; k <= 8; ++k) {
    std::vector<Index> r(static_cast<std::size_t>(k));
    std::iota(r.begin(), r.end(), 0);
    std::shuffle(r.begin(), r.end(), rng);
    const auto m = make_label_mapping(r, k - 1);
    CHECK(std::count(m.mapping.begin(), m.mapping.end(), 0) == 1);
    std::set<Index> ranked;
    for (Index c = 0; c < k; ++c)
      if (m.mapping[static_cast<std::size_t>(c)] != 0)
        ranked.insert(m.mapping[static_cast<std::size_t>(c)]);
    CHECK(static_cast<Index>(ranked.size()) == k - 1);
  }
}

TEST_CASE("class_weights") {
  const std::vector<Index> balanced{0, 1, 0, 1};
  CHECK(class_weights(balanced, 2) == Eigen::Vector2d(1.0, 1.0));

  std::vector<Index> skewed(90, 0);
  skewed.insert(skewed.end(), 10, 1);
  const Eigen::VectorXd w = class_weights(skewed, 2);
  CHECK(std::abs(w(0) - 100.0 / 180.0) < 1e-15);
  CHECK(std::abs(w(1) - 5.0) < 1e-15);
  CHECK(90 * w(0) + 10 * w(1) == doctest::Approx(100.0).epsilon(1e-15));

  const std::vector<Index> three{0, 0, 0, 1, 1, 2};
  const Eigen::VectorXd w3 = class_weights(three, 3);
  CHECK(w3(0) < w3(1));
  CHECK(w3(1) < w3(2));

  const std::vector<Index> missing{0, 0, 1};
  CHECK_THROWS_AS(class_weights(missing, 3), ConfigError);
}

TEST_CASE("pad_batch") {
  const Dataset eq = sequential(3, 4);
  const std::vector<std::size_t> all{0, 1, 2};
  CHECK(pad_batch(eq, all).mask.all());

  Dataset mixed = sequential(2, 2);
  mixed.samples[1].series = Eigen::VectorXd::LinSpaced(5, 1, 5);
  const std::vector<std::size_t> both{0, 1};
  const auto b = pad_batch(mixed, both);
  CHECK(b.num_steps() == 5);
  CHECK(b.mask.row(0).count() == 2);
  CHECK(b.mask(0, 0));
  CHECK(b.mask(0, 1));
  CHECK(!b.mask(0, 2));
  CHECK(b.mask.row(1).all());
  CHECK(b.steps[3](0, 0) == 0.0);
  for (Index i = 0; i < 2; ++i)
    CHECK(unpad(b, i) == mixed.samples[static_cast<std::size_t>(i)].series);
}
