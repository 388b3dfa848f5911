#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"

#include "gradcheck.hpp"
#include "taxo/rnn.hpp"

using namespace taxo;

namespace {

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Model unit_model(CellKind kind, double weight) {
  Model m = Model::zeros(kind, 1, 1, 2);
  m.cell.input_weights.setConstant(weight);
  m.cell.recurrent_weights.setConstant(weight);
  return m;
}

SequenceBatch<double> one_sample(const Eigen::MatrixXd& series) {
  SequenceBatch<double> b;
  for (Index t = 0; t < series.rows(); ++t) b.steps.push_back(series.row(t).transpose());
  b.mask.setConstant(1, series.rows(), true);
  return b;
}

}  // namespace

TEST_CASE("init_params is deterministic and bounded") {
  const Model a = init_params(42, 5, 7, 3, CellKind::LSTM);
  const Model b = init_params(42, 5, 7, 3, CellKind::LSTM);
  CHECK(flatten(a) == flatten(b));
  CHECK(flatten(a) != flatten(init_params(43, 5, 7, 3, CellKind::LSTM)));
  CHECK(a.cell.bias.isZero(0.0));
  CHECK(a.attention.projection_bias.isZero(0.0));
  CHECK(a.head.bias.isZero(0.0));
  CHECK(a.cell.input_weights.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / (5 + 7)));
  CHECK(a.cell.recurrent_weights.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / (7 + 7)));
  CHECK(a.attention.projection.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / (7 + 7)));
  CHECK(a.attention.score.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / (7 + 1)));
  CHECK(a.head.weights.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / (7 + 3)));
  a.validate();
}

TEST_CASE("init_params weights have zero mean within three standard errors") {
  const Model m = init_params(2024, 100, 100, 2, CellKind::GRU);
  const double bound = std::sqrt(6.0 / 200.0);
  const Eigen::Map<const Eigen::VectorXd> w(m.cell.input_weights.data(), 10000);
  const double se = bound / std::sqrt(3.0) / std::sqrt(10000.0);
  CHECK(std::abs(w.mean()) < 3 * se);
}

TEST_CASE("gru_step closed forms") {
  const Model zero = Model::zeros(CellKind::GRU, 2, 3, 2);
  Eigen::VectorXd h(3);
  h << 1.0, -2.0, 0.5;
  const Eigen::VectorXd x = Eigen::VectorXd::Constant(2, 0.7);
  CHECK((gru_step<double>(zero.cell, x, h) - 0.5 * h).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(gru_step<double>(zero.cell, x, Eigen::VectorXd::Zero(3)).isZero(0.0));

  const Model unit = unit_model(CellKind::GRU, 1.0);
  const Eigen::MatrixXd out =
      gru_step<double>(unit.cell, Eigen::VectorXd::Ones(1), Eigen::VectorXd::Zero(1));
  CHECK(std::abs(out(0) - 0.20482421480982513) < 1e-15);
  CHECK(std::abs(out(0) - (1 - sig(1)) * std::tanh(1.0)) < 1e-15);

  CHECK_THROWS_AS(gru_step<double>(unit.cell, Eigen::VectorXd::Ones(2), Eigen::VectorXd::Zero(1)),
                  DimensionError);
}

TEST_CASE("lstm_step closed forms") {
  const Model zero = Model::zeros(CellKind::LSTM, 2, 3, 2);
  Eigen::VectorXd c(3);
  c << 1.0, -2.0, 4.0;
  const Eigen::VectorXd x = Eigen::VectorXd::Constant(2, -0.3);
  const Eigen::VectorXd h = Eigen::VectorXd::Constant(3, 0.2);
  auto [h1, c1] = lstm_step<double>(zero.cell, x, h, c);
  CHECK((c1 - 0.5 * c).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((h1 - 0.5 * (0.5 * c).array().tanh().matrix()).cwiseAbs().maxCoeff() < 1e-15);

  auto [h0, c0] = lstm_step<double>(zero.cell, x, h, Eigen::VectorXd::Zero(3));
  CHECK(h0.isZero(0.0));
  CHECK(c0.isZero(0.0));

  const Model unit = unit_model(CellKind::LSTM, 1.0);
  auto [hu, cu] = lstm_step<double>(unit.cell, Eigen::VectorXd::Ones(1), Eigen::VectorXd::Zero(1),
                                    Eigen::VectorXd::Zero(1));
  CHECK(std::abs(cu(0) - 0.5567699411459397) < 1e-15);
  CHECK(std::abs(hu(0) - 0.36960635293570576) < 1e-15);
}

TEST_CASE("attention_pool") {
  const Model m = init_params(1, 2, 4, 2, CellKind::GRU);
  SUBCASE("single step") {
    Eigen::MatrixXd hs(1, 4);
    hs << 0.1, -0.2, 0.3, 0.9;
    const bool mask[] = {true};
    const auto r = attention_pool(hs, mask, m.attention);
    CHECK(r.weights(0) == 1.0);
    CHECK(r.context == hs.row(0).transpose());
  }
  SUBCASE("identical states give that state") {
    Eigen::MatrixXd hs = Eigen::RowVectorXd::LinSpaced(4, -1, 1).replicate(5, 1);
    const bool mask[] = {true, true, false, true, true};
    const auto r = attention_pool(hs, mask, m.attention);
    CHECK((r.context - hs.row(0).transpose()).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(r.weights(2) == 0.0);
    CHECK(std::abs(r.weights.sum() - 1) < 1e-15);
  }
  SUBCASE("hand-set scores 0 and ln 3") {
    // 1-dim: u = tanh(h), score = v u. h1 = 0 gives score 0; v chosen so score 2 = ln 3.
    AttentionParams<double> attn = AttentionParams<double>::zeros(1);
    attn.projection(0, 0) = 1.0;
    attn.score(0) = std::log(3.0) / std::tanh(1.0);
    Eigen::MatrixXd hs(2, 1);
    hs << 0.0, 1.0;
    const bool mask[] = {true, true};
    const auto r = attention_pool(hs, mask, attn);
    CHECK(std::abs(r.weights(0) - 0.25) < 1e-15);
    CHECK(std::abs(r.weights(1) - 0.75) < 1e-15);
  }
  SUBCASE("all masked is rejected") {
    Eigen::MatrixXd hs = Eigen::MatrixXd::Ones(2, 4);
    const bool mask[] = {false, false};
    CHECK_THROWS_AS(attention_pool(hs, mask, m.attention), InvalidInputError);
  }
}

TEST_CASE("model_forward rows are distributions and samples are independent") {
  for (CellKind kind : {CellKind::GRU, CellKind::LSTM}) {
    const auto inst = testing::random_instance(7, kind);
    const Eigen::MatrixXd p = model_forward(inst.model, inst.batch);
    CHECK(p.rows() == inst.batch.batch_size());
    CHECK((p.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-9);

    // Duplicate sample 0 into a two-column batch.
    SequenceBatch<double> dup;
    for (const auto& x : inst.batch.steps) dup.steps.push_back(x.col(0).replicate(1, 2));
    dup.mask = inst.batch.mask.row(0).replicate(2, 1);
    const Eigen::MatrixXd pd = model_forward(inst.model, dup);
    CHECK(pd.row(0) == pd.row(1));
  }
}

TEST_CASE("model_forward single step equals the manual composition") {
  const Model m = init_params(9, 3, 5, 4, CellKind::GRU);
  Eigen::MatrixXd series(1, 3);
  series << 0.4, -1.2, 0.8;
  const Eigen::MatrixXd p = model_forward(m, one_sample(series));

  const Eigen::VectorXd h =
      gru_step<double>(m.cell, series.row(0).transpose(), Eigen::VectorXd::Zero(5));
  const bool mask[] = {true};
  const auto pooled = attention_pool(Eigen::MatrixXd(h.transpose()), mask, m.attention);
  const Eigen::VectorXd expected = softmax((m.head.weights * pooled.context + m.head.bias).eval());
  CHECK((p.row(0).transpose() - expected).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("model_forward rejects bad batches") {
  const Model m = init_params(9, 3, 5, 4, CellKind::LSTM);
  SequenceBatch<double> b = one_sample(Eigen::MatrixXd::Ones(2, 2));
  CHECK_THROWS_AS(model_forward(m, b), DimensionError);
  SequenceBatch<double> masked = one_sample(Eigen::MatrixXd::Ones(2, 3));
  masked.mask.setConstant(false);
  CHECK_THROWS_AS(model_forward(m, masked), InvalidInputError);
}

TEST_CASE("BPTT gradients match finite differences") {
  for (CellKind kind : {CellKind::GRU, CellKind::LSTM})
    for (std::uint64_t seed = 100; seed < 110; ++seed) {
      CAPTURE(seed);
      const auto inst = testing::random_instance(seed, kind);
      CHECK(testing::gradient_check(inst) < 1e-4);
    }
}

TEST_CASE("head bias gradient is the weighted mean of probs minus one-hot") {
  const auto inst = testing::random_instance(31, CellKind::LSTM);
  const auto lg = model_backward(inst.model, inst.batch, inst.targets, inst.class_weights);
  const Eigen::MatrixXd p = model_forward(inst.model, inst.batch);
  Eigen::VectorXd expected = Eigen::VectorXd::Zero(inst.model.num_classes());
  for (Index b = 0; b < p.rows(); ++b) {
    Eigen::VectorXd r = p.row(b).transpose();
    r(inst.targets[static_cast<std::size_t>(b)]) -= 1;
    expected += r * inst.class_weights(inst.targets[static_cast<std::size_t>(b)]);
  }
  expected /= static_cast<double>(p.rows());
  CHECK((lg.gradient.head.bias - expected).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("masked padding changes neither outputs nor gradients") {
  for (CellKind kind : {CellKind::GRU, CellKind::LSTM})
    for (std::uint64_t seed = 200; seed < 210; ++seed) {
      const auto inst = testing::random_instance(seed, kind);
      SequenceBatch<double> padded = inst.batch;
      const Index extra = 3;
      for (Index k = 0; k < extra; ++k)
        padded.steps.push_back(
            Eigen::MatrixXd::Constant(inst.model.input_dim(), inst.batch.batch_size(), 9.0));
      padded.mask.conservativeResize(Eigen::NoChange, inst.batch.num_steps() + extra);
      padded.mask.rightCols(extra).setConstant(false);

      CHECK((model_forward(inst.model, inst.batch) - model_forward(inst.model, padded))
                .cwiseAbs()
                .maxCoeff() <= 1e-12);
      const auto a = model_backward(inst.model, inst.batch, inst.targets, inst.class_weights);
      const auto b = model_backward(inst.model, padded, inst.targets, inst.class_weights);
      CHECK((flatten(a.gradient) - flatten(b.gradient)).cwiseAbs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("forward attention weights vanish on masked steps") {
  const auto inst = testing::random_instance(77, CellKind::GRU);
  const auto cache = detail::forward(inst.model, inst.batch);
  for (Index b = 0; b < inst.batch.batch_size(); ++b) {
    CHECK(std::abs(cache.alpha.col(b).sum() - 1) < 1e-12);
    for (Index t = 0; t < inst.batch.num_steps(); ++t)
      if (!inst.batch.mask(b, t)) CHECK(cache.alpha(t, b) == 0.0);
  }
}

TEST_CASE("a zero learning-rate Adam step leaves the loss unchanged") {
  auto inst = testing::random_instance(5, CellKind::GRU);
  const double before = model_loss(inst.model, inst.batch, inst.targets);
  const auto lg = model_backward(inst.model, inst.batch, inst.targets);
  Eigen::VectorXd params = flatten(inst.model);
  AdamState<double> adam(params.size(), 0.0);
  adam_step<double>(params, flatten(lg.gradient), adam);
  assign_parameters(inst.model, params);
  CHECK(model_loss(inst.model, inst.batch, inst.targets) == before);
}

TEST_CASE("model_backward rejects bad targets") {
  const auto inst = testing::random_instance(8, CellKind::LSTM);
  std::vector<Index> bad(inst.targets.size(), inst.model.num_classes());
  CHECK_THROWS_AS(model_backward(inst.model, inst.batch, bad), IndexError);
  std::vector<Index> short_targets;
  CHECK_THROWS_AS(model_backward(inst.model, inst.batch, short_targets), DimensionError);
}

TEST_CASE("transfer_recurrent_weights") {
  const Model source = init_params(3, 4, 6, 2, CellKind::LSTM);
  Eigen::MatrixXd series = Eigen::MatrixXd::Random(7, 4);

  const Model dest = transfer_recurrent_weights(source, {5, false}, 99);
  CHECK(dest.head.weights.rows() == 5);
  CHECK(dest.head.weights.cols() == 6);
  CHECK(dest.cell.input_weights == source.cell.input_weights);
  CHECK(dest.cell.recurrent_weights == source.cell.recurrent_weights);
  CHECK(dest.cell.bias == source.cell.bias);
  CHECK(hidden_states(source.cell, series) == hidden_states(dest.cell, series));
  CHECK(dest.attention.projection != source.attention.projection);

  const Model carried = transfer_recurrent_weights(source, {3, true}, 99);
  const Eigen::MatrixXd hs = hidden_states(source.cell, series);
  const bool mask[] = {true, true, true, true, true, true, true};
  CHECK(attention_pool(hs, mask, source.attention).weights ==
        attention_pool(hidden_states(carried.cell, series), mask, carried.attention).weights);

  // Destination owns its storage.
  Model mutated = transfer_recurrent_weights(source, {2, true}, 1);
  const Eigen::VectorXd before = flatten(source);
  mutated.cell.input_weights.setConstant(123.0);
  mutated.attention.projection.setConstant(-4.0);
  CHECK(flatten(source) == before);
}

TEST_CASE("flatten and assign_parameters round trip") {
  Model m = init_params(12, 3, 4, 3, CellKind::GRU);
  const Eigen::VectorXd p = flatten(m);
  Model other = Model::zeros(CellKind::GRU, 3, 4, 3);
  assign_parameters(other, p);
  CHECK(flatten(other) == p);
  CHECK_THROWS_AS(assign_parameters(other, Eigen::VectorXd::Zero(3)), DimensionError);
}

TEST_CASE("core compiles for single precision") {
  const auto m = init_params<float>(1, 2, 3, 2, CellKind::GRU);
  SequenceBatch<float> b;
  b.steps.push_back(Eigen::MatrixXf::Ones(2, 1));
  b.mask.setConstant(1, 1, true);
  const Eigen::MatrixXf p = model_forward(m, b);
  CHECK(std::abs(p.sum() - 1.0f) < 1e-5f);
}
