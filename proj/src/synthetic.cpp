#include "taxo/synthetic.hpp"

#include <random>
#include <string>

#include "taxo/random.hpp"

namespace taxo::synthetic {

namespace {

Dataset empty_dataset(std::vector<std::string> names, Index dim) {
  Dataset ds;
  ds.num_classes = static_cast<Index>(names.size());
  ds.class_names = std::move(names);
  ds.dim = dim;
  return ds;
}

void push(Dataset& ds, Index label, Eigen::MatrixXd series) {
  TimeSeriesSample s;
  s.id = "s" + std::to_string(ds.samples.size());
  s.label = label;
  s.series = std::move(series);
  ds.samples.push_back(std::move(s));
}

}  // namespace

Dataset separable_constants(std::size_t per_class, Index dim, Index min_len, Index max_len,
                            std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<Index> len(min_len, max_len);
  Dataset ds = empty_dataset({"neg", "pos"}, dim);
  for (std::size_t i = 0; i < per_class; ++i)
    for (Index k = 0; k < 2; ++k)
      push(ds, k, Eigen::MatrixXd::Constant(len(rng), dim, k == 0 ? -1.0 : 1.0));
  return ds;
}

Dataset confusable_three_class(std::size_t per_class, Index dim, Index length, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, 0.5);
  const double centre[] = {0.5, 0.5, -2.0};
  Dataset ds = empty_dataset({"a", "b", "c"}, dim);
  for (std::size_t i = 0; i < per_class; ++i)
    for (Index k = 0; k < 3; ++k) {
      Eigen::MatrixXd series(length, dim);
      for (Index t = 0; t < length; ++t)
        for (Index d = 0; d < dim; ++d) series(t, d) = centre[k] + noise(rng);
      push(ds, k, std::move(series));
    }
  return ds;
}

Dataset monotone_ramps(std::size_t per_class, Index num_classes, Index dim, Index length,
                       std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, 0.05);
  std::vector<std::string> names;
  for (Index k = 0; k < num_classes; ++k) names.push_back("ramp" + std::to_string(k));
  Dataset ds = empty_dataset(names, dim);
  for (std::size_t i = 0; i < per_class; ++i)
    for (Index k = 0; k < num_classes; ++k) {
      const double slope = 0.5 + 0.5 * static_cast<double>(k);
      Eigen::MatrixXd series(length, dim);
      for (Index t = 0; t < length; ++t)
        for (Index d = 0; d < dim; ++d)
          series(t, d) =
              slope * (static_cast<double>(t) / static_cast<double>(length - 1) - 0.5) + noise(rng);
      push(ds, k, std::move(series));
    }
  return ds;
}

Dataset blobs(std::size_t per_class, Index num_classes, Index dim, Index min_len, Index max_len,
              double spread, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_int_distribution<Index> len(min_len, max_len);
  std::vector<std::string> names;
  for (Index k = 0; k < num_classes; ++k) names.push_back("class" + std::to_string(k));
  Dataset ds = empty_dataset(names, dim);
  for (std::size_t i = 0; i < per_class; ++i)
    for (Index k = 0; k < num_classes; ++k) {
      Eigen::MatrixXd series(len(rng), dim);
      for (Index t = 0; t < series.rows(); ++t)
        for (Index d = 0; d < dim; ++d) series(t, d) = spread * static_cast<double>(k) + noise(rng);
      push(ds, k, std::move(series));
    }
  return ds;
}

}  // namespace taxo::synthetic
