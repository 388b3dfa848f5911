#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "taxo/error.hpp"
#include "taxo/numerics.hpp"
#include "taxo/random.hpp"

namespace taxo {

enum class CellKind { GRU, LSTM };

inline Index gate_count(CellKind kind) { return kind == CellKind::GRU ? 3 : 4; }

inline std::string to_string(CellKind kind) { return kind == CellKind::GRU ? "gru" : "lstm"; }

inline CellKind parse_cell_kind(std::string_view name) {
  if (name == "gru" || name == "GRU") return CellKind::GRU;
  if (name == "lstm" || name == "LSTM") return CellKind::LSTM;
  throw ConfigError("unknown cell kind '" + std::string(name) + "'");
}

/// Gate weights stacked block-wise along the rows.
/// GRU blocks: update z, reset r, candidate h. LSTM blocks: input i, forget f, cell g, output o.
template <typename Scalar>
struct RecurrentCellParams {
  CellKind kind = CellKind::GRU;
  Matrix<Scalar> input_weights;      // (gates * hidden) x input
  Matrix<Scalar> recurrent_weights;  // (gates * hidden) x hidden
  Vector<Scalar> bias;               // gates * hidden

  Index input_dim() const { return input_weights.cols(); }
  Index hidden_dim() const { return recurrent_weights.cols(); }

  static RecurrentCellParams zeros(CellKind kind, Index input_dim, Index hidden_dim) {
    const Index rows = gate_count(kind) * hidden_dim;
    return {kind, Matrix<Scalar>::Zero(rows, input_dim), Matrix<Scalar>::Zero(rows, hidden_dim),
            Vector<Scalar>::Zero(rows)};
  }
};

/// Additive attention: u_t = tanh(P h_t + b), score_t = v . u_t.
template <typename Scalar>
struct AttentionParams {
  Matrix<Scalar> projection;
  Vector<Scalar> projection_bias;
  Vector<Scalar> score;

  static AttentionParams zeros(Index hidden_dim) {
    return {Matrix<Scalar>::Zero(hidden_dim, hidden_dim), Vector<Scalar>::Zero(hidden_dim),
            Vector<Scalar>::Zero(hidden_dim)};
  }
};

template <typename Scalar>
struct OutputHead {
  Matrix<Scalar> weights;  // classes x hidden
  Vector<Scalar> bias;

  Index num_classes() const { return weights.rows(); }

  static OutputHead zeros(Index num_classes, Index hidden_dim) {
    return {Matrix<Scalar>::Zero(num_classes, hidden_dim), Vector<Scalar>::Zero(num_classes)};
  }
};

/// Recurrent cell, attention pooling and a dense softmax head. The same type
/// doubles as the container for parameter gradients.
template <typename Scalar>
struct SequenceClassifier {
  RecurrentCellParams<Scalar> cell;
  AttentionParams<Scalar> attention;
  OutputHead<Scalar> head;

  Index input_dim() const { return cell.input_dim(); }
  Index hidden_dim() const { return cell.hidden_dim(); }
  Index num_classes() const { return head.num_classes(); }
  CellKind kind() const { return cell.kind; }

  static SequenceClassifier zeros(CellKind kind, Index input_dim, Index hidden_dim,
                                  Index num_classes) {
    return {RecurrentCellParams<Scalar>::zeros(kind, input_dim, hidden_dim),
            AttentionParams<Scalar>::zeros(hidden_dim),
            OutputHead<Scalar>::zeros(num_classes, hidden_dim)};
  }

  SequenceClassifier zeros_like() const {
    return zeros(kind(), input_dim(), hidden_dim(), num_classes());
  }

  /// Throws DimensionError on inconsistent shapes, InvalidInputError on non-finite values.
  void validate() const;
};

using Model = SequenceClassifier<double>;

/// Visits every parameter tensor in a fixed order with its checkpoint name.
template <typename ModelT, typename Fn>
void for_each_tensor(ModelT& model, Fn&& fn) {
  fn("cell.input_weights", model.cell.input_weights);
  fn("cell.recurrent_weights", model.cell.recurrent_weights);
  fn("cell.bias", model.cell.bias);
  fn("attention.projection", model.attention.projection);
  fn("attention.projection_bias", model.attention.projection_bias);
  fn("attention.score", model.attention.score);
  fn("head.weights", model.head.weights);
  fn("head.bias", model.head.bias);
}

template <typename Scalar>
void SequenceClassifier<Scalar>::validate() const {
  const Index h = hidden_dim();
  const Index g = gate_count(cell.kind) * h;
  auto expect = [](bool ok, const char* what) {
    if (!ok) throw DimensionError(std::string("inconsistent model shape: ") + what);
  };
  expect(input_dim() >= 1 && h >= 1, "empty cell");
  expect(cell.input_weights.rows() == g, "cell.input_weights rows");
  expect(cell.recurrent_weights.rows() == g, "cell.recurrent_weights rows");
  expect(cell.bias.size() == g, "cell.bias size");
  expect(attention.projection.rows() == h && attention.projection.cols() == h,
         "attention.projection");
  expect(attention.projection_bias.size() == h, "attention.projection_bias");
  expect(attention.score.size() == h, "attention.score");
  expect(head.weights.cols() == h, "head.weights cols");
  expect(head.bias.size() == head.weights.rows(), "head.bias size");
  expect(num_classes() >= 2, "head needs at least two classes");
  for_each_tensor(*this, [](std::string_view name, const auto& t) {
    if (!all_finite(t)) throw InvalidInputError("non-finite value in " + std::string(name));
  });
}

template <typename Scalar>
Index parameter_count(const SequenceClassifier<Scalar>& model) {
  Index n = 0;
  for_each_tensor(model, [&](std::string_view, const auto& t) { n += t.size(); });
  return n;
}

/// Concatenation of all tensors (column-major within each) in for_each_tensor order.
template <typename Scalar>
Vector<Scalar> flatten(const SequenceClassifier<Scalar>& model) {
  Vector<Scalar> out(parameter_count(model));
  Index offset = 0;
  for_each_tensor(model, [&](std::string_view, const auto& t) {
    out.segment(offset, t.size()) = Eigen::Map<const Vector<Scalar>>(t.data(), t.size());
    offset += t.size();
  });
  return out;
}

/// Inverse of flatten for a model of matching shape.
template <typename Scalar>
void assign_parameters(SequenceClassifier<Scalar>& model,
                       const std::type_identity_t<Eigen::Ref<const Vector<Scalar>>>& values) {
  if (values.size() != parameter_count(model))
    throw DimensionError("assign_parameters: expected " + std::to_string(parameter_count(model)) +
                         " values, got " + std::to_string(values.size()));
  Index offset = 0;
  for_each_tensor(model, [&](std::string_view, auto& t) {
    Eigen::Map<Vector<Scalar>>(t.data(), t.size()) = values.segment(offset, t.size());
    offset += t.size();
  });
}

namespace detail {

template <typename Scalar, typename Derived>
void fill_glorot(const Eigen::MatrixBase<Derived>& block_, Index fan_in, Index fan_out, Rng& rng) {
  auto& block = const_cast<Eigen::MatrixBase<Derived>&>(block_);
  const Scalar bound = std::sqrt(Scalar(6) / static_cast<Scalar>(fan_in + fan_out));
  std::uniform_real_distribution<Scalar> dist(-bound, bound);
  // Row-major fill order so the draw sequence does not depend on storage order.
  for (Index r = 0; r < block.rows(); ++r)
    for (Index c = 0; c < block.cols(); ++c) block(r, c) = dist(rng);
}

template <typename Scalar>
OutputHead<Scalar> init_head(Index num_classes, Index hidden_dim, Rng& rng) {
  auto head = OutputHead<Scalar>::zeros(num_classes, hidden_dim);
  fill_glorot<Scalar>(head.weights, hidden_dim, num_classes, rng);
  return head;
}

template <typename Scalar>
AttentionParams<Scalar> init_attention(Index hidden_dim, Rng& rng) {
  auto attn = AttentionParams<Scalar>::zeros(hidden_dim);
  fill_glorot<Scalar>(attn.projection, hidden_dim, hidden_dim, rng);
  fill_glorot<Scalar>(attn.score, hidden_dim, 1, rng);
  return attn;
}

}  // namespace detail

/// Glorot-uniform weights (per gate block: fan_in = input or hidden, fan_out = hidden), zero
/// biases. Fully determined by `seed`.
template <typename Scalar = double>
SequenceClassifier<Scalar> init_params(std::uint64_t seed, Index input_dim, Index hidden_dim,
                                       Index num_classes, CellKind kind) {
  if (input_dim < 1 || hidden_dim < 1 || num_classes < 2)
    throw ConfigError("init_params: need input_dim >= 1, hidden_dim >= 1, num_classes >= 2");
  Rng rng(seed);
  auto model = SequenceClassifier<Scalar>::zeros(kind, input_dim, hidden_dim, num_classes);
  for (Index g = 0; g < gate_count(kind); ++g) {
    detail::fill_glorot<Scalar>(model.cell.input_weights.middleRows(g * hidden_dim, hidden_dim),
                                input_dim, hidden_dim, rng);
    detail::fill_glorot<Scalar>(model.cell.recurrent_weights.middleRows(g * hidden_dim, hidden_dim),
                                hidden_dim, hidden_dim, rng);
  }
  model.attention = detail::init_attention<Scalar>(hidden_dim, rng);
  model.head = detail::init_head<Scalar>(num_classes, hidden_dim, rng);
  return model;
}

struct TransferSpec {
  Index num_classes = 2;
  bool carry_attention = false;
};

/// New model whose recurrent cell is a copy of `source`'s; the head (and the attention unless
/// carried) are freshly initialised from `seed`.
template <typename Scalar>
SequenceClassifier<Scalar> transfer_recurrent_weights(const SequenceClassifier<Scalar>& source,
                                                      const TransferSpec& spec,
                                                      std::uint64_t seed) {
  source.validate();
  if (spec.num_classes < 2) throw ConfigError("transfer: destination needs >= 2 classes");
  Rng rng(seed);
  SequenceClassifier<Scalar> dest;
  dest.cell = source.cell;
  dest.attention = spec.carry_attention ? source.attention
                                        : detail::init_attention<Scalar>(source.hidden_dim(), rng);
  dest.head = detail::init_head<Scalar>(spec.num_classes, source.hidden_dim(), rng);
  return dest;
}

// ---------------------------------------------------------------------------
// Single-step cells. Inputs may be vectors or hidden x batch matrices.

namespace detail {

template <typename Scalar>
void check_step_dims(const RecurrentCellParams<Scalar>& cell, Index x_rows, Index h_rows,
                     Index x_cols, Index h_cols) {
  if (x_rows != cell.input_dim() || h_rows != cell.hidden_dim() || x_cols != h_cols)
    throw DimensionError(
        "cell step: input " + std::to_string(x_rows) + "x" + std::to_string(x_cols) + ", state " +
        std::to_string(h_rows) + "x" + std::to_string(h_cols) + " vs cell (input " +
        std::to_string(cell.input_dim()) + ", hidden " + std::to_string(cell.hidden_dim()) + ")");
}

/// GRU step over a batch. `gates` receives [z; r; candidate], `reset_hidden` receives r * h_prev.
template <typename Scalar>
Matrix<Scalar> gru_step_cached(const RecurrentCellParams<Scalar>& cell,
                               const Eigen::Ref<const Matrix<Scalar>>& x,
                               const Eigen::Ref<const Matrix<Scalar>>& h_prev,
                               Matrix<Scalar>& gates, Matrix<Scalar>& reset_hidden) {
  const Index h = cell.hidden_dim();
  gates.noalias() = cell.input_weights * x;
  gates.colwise() += cell.bias;
  gates.topRows(2 * h).noalias() += cell.recurrent_weights.topRows(2 * h) * h_prev;
  gates.topRows(2 * h) = sigmoid(gates.topRows(2 * h).array()).matrix();
  reset_hidden = gates.middleRows(h, h).cwiseProduct(h_prev);
  gates.bottomRows(h).noalias() += cell.recurrent_weights.bottomRows(h) * reset_hidden;
  gates.bottomRows(h) = gates.bottomRows(h).array().tanh().matrix();
  const auto z = gates.topRows(h).array();
  return ((Scalar(1) - z) * gates.bottomRows(h).array() + z * h_prev.array()).matrix();
}

/// LSTM step over a batch. `gates` receives [i; f; g; o] post-activation.
template <typename Scalar>
std::pair<Matrix<Scalar>, Matrix<Scalar>> lstm_step_cached(
    const RecurrentCellParams<Scalar>& cell, const Eigen::Ref<const Matrix<Scalar>>& x,
    const Eigen::Ref<const Matrix<Scalar>>& h_prev, const Eigen::Ref<const Matrix<Scalar>>& c_prev,
    Matrix<Scalar>& gates) {
  const Index h = cell.hidden_dim();
  gates.noalias() = cell.input_weights * x;
  gates.noalias() += cell.recurrent_weights * h_prev;
  gates.colwise() += cell.bias;
  gates.topRows(2 * h) = sigmoid(gates.topRows(2 * h).array()).matrix();
  gates.middleRows(2 * h, h) = gates.middleRows(2 * h, h).array().tanh().matrix();
  gates.bottomRows(h) = sigmoid(gates.bottomRows(h).array()).matrix();
  Matrix<Scalar> c = (gates.middleRows(h, h).array() * c_prev.array() +
                      gates.topRows(h).array() * gates.middleRows(2 * h, h).array())
                         .matrix();
  Matrix<Scalar> out = (gates.bottomRows(h).array() * c.array().tanh()).matrix();
  return {std::move(out), std::move(c)};
}

}  // namespace detail

template <typename Scalar, typename DX, typename DH>
Matrix<Scalar> gru_step(const RecurrentCellParams<Scalar>& cell, const Eigen::MatrixBase<DX>& x,
                        const Eigen::MatrixBase<DH>& h_prev) {
  if (cell.kind != CellKind::GRU) throw ConfigError("gru_step on a non-GRU cell");
  detail::check_step_dims(cell, x.rows(), h_prev.rows(), x.cols(), h_prev.cols());
  Matrix<Scalar> gates, reset_hidden;
  return detail::gru_step_cached<Scalar>(cell, x.template cast<Scalar>(),
                                         h_prev.template cast<Scalar>(), gates, reset_hidden);
}

/// Returns (h_t, c_t).
template <typename Scalar, typename DX, typename DH, typename DC>
std::pair<Matrix<Scalar>, Matrix<Scalar>> lstm_step(const RecurrentCellParams<Scalar>& cell,
                                                    const Eigen::MatrixBase<DX>& x,
                                                    const Eigen::MatrixBase<DH>& h_prev,
                                                    const Eigen::MatrixBase<DC>& c_prev) {
  if (cell.kind != CellKind::LSTM) throw ConfigError("lstm_step on a non-LSTM cell");
  detail::check_step_dims(cell, x.rows(), h_prev.rows(), x.cols(), h_prev.cols());
  if (c_prev.rows() != h_prev.rows() || c_prev.cols() != h_prev.cols())
    throw DimensionError("lstm_step: cell state shape differs from hidden state");
  Matrix<Scalar> gates;
  return detail::lstm_step_cached<Scalar>(cell, x.template cast<Scalar>(),
                                          h_prev.template cast<Scalar>(),
                                          c_prev.template cast<Scalar>(), gates);
}

// ---------------------------------------------------------------------------
// Attention pooling.

template <typename Scalar>
struct AttentionResult {
  Vector<Scalar> context;
  Vector<Scalar> weights;
};

/// Pools the rows of `hidden_states` (T x hidden). Masked steps get weight 0.
template <typename Scalar, typename Derived>
AttentionResult<Scalar> attention_pool(const Eigen::MatrixBase<Derived>& hidden_states,
                                       std::span<const bool> mask,
                                       const AttentionParams<Scalar>& attn) {
  const Index steps = hidden_states.rows();
  if (static_cast<Index>(mask.size()) != steps)
    throw DimensionError("attention_pool: mask length differs from number of steps");
  if (hidden_states.cols() != attn.projection.cols())
    throw DimensionError("attention_pool: hidden size differs from attention parameters");
  Vector<Scalar> scores(steps);
  bool any = false;
  Scalar best = Scalar(0);
  for (Index t = 0; t < steps; ++t) {
    const Vector<Scalar> u =
        (attn.projection * hidden_states.row(t).transpose() + attn.projection_bias)
            .array()
            .tanh()
            .matrix();
    scores(t) = attn.score.dot(u);
    if (mask[t] && (!any || scores(t) > best)) best = scores(t), any = true;
  }
  if (!any) throw InvalidInputError("attention_pool: every step is masked");
  AttentionResult<Scalar> out{Vector<Scalar>::Zero(hidden_states.cols()),
                              Vector<Scalar>::Zero(steps)};
  for (Index t = 0; t < steps; ++t)
    if (mask[t]) out.weights(t) = std::exp(scores(t) - best);
  out.weights /= out.weights.sum();
  for (Index t = 0; t < steps; ++t)
    if (mask[t]) out.context += out.weights(t) * hidden_states.row(t).transpose();
  return out;
}

// ---------------------------------------------------------------------------
// Batched forward pass and backpropagation through time.

/// Right-padded batch in time-major layout: steps[t] is input x batch.
template <typename Scalar>
struct SequenceBatch {
  std::vector<Matrix<Scalar>> steps;
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> mask;  // batch x steps

  Index batch_size() const { return mask.rows(); }
  Index num_steps() const { return mask.cols(); }
  Index input_dim() const { return steps.empty() ? 0 : steps.front().rows(); }
};

template <typename Scalar>
struct ForwardCache {
  // Per-step tensors cover columns [0, width[t]); columns past the width are masked at step t.
  std::vector<Index> width;
  std::vector<Matrix<Scalar>> hidden;                         // steps + 1 states, hidden[0] = 0
  std::vector<Matrix<Scalar>> cell_state;                     // LSTM only, steps + 1
  std::vector<Matrix<Scalar>> gates;                          // post-activation, per step
  std::vector<Matrix<Scalar>> reset_hidden;                   // GRU only: r * h_prev
  std::vector<Matrix<Scalar>> cell_tanh;                      // LSTM only: tanh(c_t) before masking
  std::vector<Matrix<Scalar>> attn_hidden;                    // u_t
  Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic> mask;  // steps x batch, 0/1
  Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic> alpha;  // steps x batch
  Matrix<Scalar> context;                                      // hidden x batch
  Matrix<Scalar> probs;                                        // classes x batch
};

namespace detail {

template <typename Scalar>
void check_batch(const SequenceClassifier<Scalar>& model, const SequenceBatch<Scalar>& batch) {
  if (batch.batch_size() == 0 || batch.num_steps() == 0) throw InvalidInputError("empty batch");
  if (static_cast<Index>(batch.steps.size()) != batch.num_steps())
    throw DimensionError("batch: step count differs from mask width");
  for (const auto& x : batch.steps)
    if (x.rows() != model.input_dim() || x.cols() != batch.batch_size())
      throw DimensionError("batch: step of shape " + std::to_string(x.rows()) + "x" +
                           std::to_string(x.cols()) + ", model expects input " +
                           std::to_string(model.input_dim()) + " for batch " +
                           std::to_string(batch.batch_size()));
  for (Index b = 0; b < batch.batch_size(); ++b)
    if (!batch.mask.row(b).any())
      throw InvalidInputError("batch: sample " + std::to_string(b) + " is fully masked");
}

/// Number of leading columns that need computing at step t: the active count when the
/// active samples form a prefix (batches sorted by decreasing length), else the full batch.
inline Index active_width(const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& mask, Index t) {
  const Index n = mask.rows();
  Index w = 0;
  while (w < n && mask(w, t)) ++w;
  for (Index b = w; b < n; ++b)
    if (mask(b, t)) return n;
  return w;
}

template <typename Scalar>
ForwardCache<Scalar> forward(const SequenceClassifier<Scalar>& model,
                             const SequenceBatch<Scalar>& batch) {
  check_batch(model, batch);
  const Index steps = batch.num_steps();
  const Index n = batch.batch_size();
  const Index h = model.hidden_dim();
  const bool lstm = model.kind() == CellKind::LSTM;

  ForwardCache<Scalar> cache;
  cache.mask = batch.mask.transpose().template cast<Scalar>();
  cache.width.resize(steps);
  cache.hidden.reserve(steps + 1);
  cache.hidden.push_back(Matrix<Scalar>::Zero(h, n));
  cache.gates.resize(steps);
  if (lstm) {
    cache.cell_state.reserve(steps + 1);
    cache.cell_state.push_back(Matrix<Scalar>::Zero(h, n));
    cache.cell_tanh.resize(steps);
  } else {
    cache.reset_hidden.resize(steps);
  }

  for (Index t = 0; t < steps; ++t) {
    const Index w = cache.width[t] = active_width(batch.mask, t);
    const auto m = cache.mask.row(t).head(w);
    // Masked columns carry the previous state unchanged.
    cache.hidden.push_back(cache.hidden[t]);
    const auto h_prev = cache.hidden[t].leftCols(w);
    const auto x = batch.steps[t].leftCols(w);
    Matrix<Scalar> h_new;
    if (lstm) {
      cache.cell_state.push_back(cache.cell_state[t]);
      const auto c_prev = cache.cell_state[t].leftCols(w);
      auto [out, c] = lstm_step_cached<Scalar>(model.cell, x, h_prev, c_prev, cache.gates[t]);
      cache.cell_tanh[t] = c.array().tanh().matrix();
      cache.cell_state[t + 1].leftCols(w) =
          (c.array().rowwise() * m + c_prev.array().rowwise() * (Scalar(1) - m)).matrix();
      h_new = std::move(out);
    } else {
      h_new = gru_step_cached<Scalar>(model.cell, x, h_prev, cache.gates[t], cache.reset_hidden[t]);
    }
    cache.hidden[t + 1].leftCols(w) =
        (h_new.array().rowwise() * m + h_prev.array().rowwise() * (Scalar(1) - m)).matrix();
  }

  // Attention over the per-step states, masked softmax per column.
  Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic> scores =
      Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic>::Zero(steps, n);
  cache.attn_hidden.resize(steps);
  for (Index t = 0; t < steps; ++t) {
    const Index w = cache.width[t];
    Matrix<Scalar>& u = cache.attn_hidden[t];
    u.noalias() = model.attention.projection * cache.hidden[t + 1].leftCols(w);
    u.colwise() += model.attention.projection_bias;
    u = u.array().tanh().matrix();
    scores.row(t).head(w) = (model.attention.score.transpose() * u).array();
  }
  cache.alpha.setZero(steps, n);
  for (Index b = 0; b < n; ++b) {
    Scalar best = -std::numeric_limits<Scalar>::infinity();
    for (Index t = 0; t < steps; ++t)
      if (batch.mask(b, t)) best = std::max(best, scores(t, b));
    if (!std::isfinite(best)) throw InvalidInputError("attention: non-finite scores");
    Scalar total = 0;
    for (Index t = 0; t < steps; ++t)
      if (batch.mask(b, t)) total += (cache.alpha(t, b) = std::exp(scores(t, b) - best));
    cache.alpha.col(b) /= total;
  }
  cache.context.setZero(h, n);
  for (Index t = 0; t < steps; ++t) {
    const Index w = cache.width[t];
    cache.context.leftCols(w).array() +=
        cache.hidden[t + 1].leftCols(w).array().rowwise() * cache.alpha.row(t).head(w);
  }

  Matrix<Scalar> logits = model.head.weights * cache.context;
  logits.colwise() += model.head.bias;
  cache.probs = softmax_columns(logits);
  return cache;
}

}  // namespace detail

/// Class probabilities, one row per sample (batch x classes).
template <typename Scalar>
Matrix<Scalar> model_forward(const SequenceClassifier<Scalar>& model,
                             const SequenceBatch<Scalar>& batch) {
  return detail::forward(model, batch).probs.transpose();
}

template <typename Scalar>
struct LossAndGradient {
  Scalar loss = 0;
  SequenceClassifier<Scalar> gradient;
};

namespace detail {

template <typename Scalar>
void check_targets(const SequenceClassifier<Scalar>& model, Index batch_size,
                   std::span<const Index> targets, const Vector<Scalar>& sample_weights) {
  if (static_cast<Index>(targets.size()) != batch_size)
    throw DimensionError("targets: expected " + std::to_string(batch_size) + ", got " +
                         std::to_string(targets.size()));
  if (sample_weights.size() != batch_size)
    throw DimensionError("sample weights: expected " + std::to_string(batch_size));
  for (Index k : targets)
    if (k < 0 || k >= model.num_classes())
      throw IndexError("target " + std::to_string(k) + " out of range for " +
                       std::to_string(model.num_classes()) + " classes");
  if (!(sample_weights.array() > Scalar(0)).all())
    throw InvalidInputError("sample weights must be positive");
}

template <typename Scalar>
Scalar mean_loss(const Matrix<Scalar>& probs, std::span<const Index> targets,
                 const Vector<Scalar>& sample_weights) {
  Scalar total = 0;
  for (Index b = 0; b < probs.cols(); ++b)
    total += cross_entropy(probs.col(b), targets[b], sample_weights(b));
  return total / static_cast<Scalar>(probs.cols());
}

}  // namespace detail

template <typename Scalar>
Vector<Scalar> sample_weights_for(std::span<const Index> targets,
                                  const Vector<Scalar>& class_weights) {
  Vector<Scalar> w(static_cast<Index>(targets.size()));
  for (std::size_t b = 0; b < targets.size(); ++b) {
    const Index k = targets[b];
    if (class_weights.size() == 0) {
      w(static_cast<Index>(b)) = Scalar(1);
    } else {
      if (k < 0 || k >= class_weights.size())
        throw IndexError("target " + std::to_string(k) + " has no class weight");
      w(static_cast<Index>(b)) = class_weights(k);
    }
  }
  return w;
}

/// Mean over the batch of per-sample weighted cross-entropy.
template <typename Scalar>
Scalar model_loss_per_sample(const SequenceClassifier<Scalar>& model,
                             const SequenceBatch<Scalar>& batch, std::span<const Index> targets,
                             const Vector<Scalar>& sample_weights) {
  detail::check_targets(model, batch.batch_size(), targets, sample_weights);
  return detail::mean_loss(detail::forward(model, batch).probs, targets, sample_weights);
}

/// `class_weights` indexed by target class; empty means unweighted.
template <typename Scalar>
Scalar model_loss(const SequenceClassifier<Scalar>& model, const SequenceBatch<Scalar>& batch,
                  std::span<const Index> targets, const Vector<Scalar>& class_weights = {}) {
  return model_loss_per_sample(model, batch, targets, sample_weights_for(targets, class_weights));
}

/// Loss and exact gradient of the mean per-sample weighted cross-entropy (BPTT).
template <typename Scalar>
LossAndGradient<Scalar> model_backward_per_sample(const SequenceClassifier<Scalar>& model,
                                                  const SequenceBatch<Scalar>& batch,
                                                  std::span<const Index> targets,
                                                  const Vector<Scalar>& sample_weights) {
  detail::check_targets(model, batch.batch_size(), targets, sample_weights);
  const ForwardCache<Scalar> cache = detail::forward(model, batch);
  const Index steps = batch.num_steps();
  const Index n = batch.batch_size();
  const Index h = model.hidden_dim();
  const auto& cell = model.cell;
  const auto& attn = model.attention;

  LossAndGradient<Scalar> out{detail::mean_loss(cache.probs, targets, sample_weights),
                              model.zeros_like()};
  auto& grad = out.gradient;

  // Softmax + cross-entropy.
  Matrix<Scalar> dlogits = cache.probs;
  for (Index b = 0; b < n; ++b) {
    dlogits(targets[b], b) -= Scalar(1);
    dlogits.col(b) *= sample_weights(b) / static_cast<Scalar>(n);
  }
  grad.head.weights.noalias() = dlogits * cache.context.transpose();
  grad.head.bias = dlogits.rowwise().sum();
  const Matrix<Scalar> dcontext = model.head.weights.transpose() * dlogits;

  // Attention: context = sum_t alpha_t h_t.
  Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic> dalpha(steps, n);
  for (Index t = 0; t < steps; ++t)
    dalpha.row(t) = (cache.hidden[t + 1].array() * dcontext.array()).colwise().sum();
  const Eigen::Array<Scalar, 1, Eigen::Dynamic> expected = (cache.alpha * dalpha).colwise().sum();
  const Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic> dscore =
      cache.alpha * (dalpha.rowwise() - expected);

  // dhidden[t] is zero past width[t]: those columns have alpha 0 and carry no score.
  std::vector<Matrix<Scalar>> dhidden(steps);
  for (Index t = 0; t < steps; ++t) {
    const Index w = cache.width[t];
    const auto hs = cache.hidden[t + 1].leftCols(w);
    const Matrix<Scalar>& u = cache.attn_hidden[t];
    const Matrix<Scalar> ds = dscore.row(t).head(w).matrix();
    grad.attention.score.noalias() += u * ds.transpose();
    Matrix<Scalar> da = ((attn.score * ds).array() * (Scalar(1) - u.array().square())).matrix();
    grad.attention.projection.noalias() += da * hs.transpose();
    grad.attention.projection_bias += da.rowwise().sum();
    dhidden[t] = (dcontext.leftCols(w).array().rowwise() * cache.alpha.row(t).head(w)).matrix();
    dhidden[t].noalias() += attn.projection.transpose() * da;
  }

  // Recurrence, newest step first. Columns past width[t] pass dh and dc through unchanged.
  // Gate gradients and their right-hand factors are stacked over time so the weight
  // gradients come out of one product each.
  std::vector<Index> offset(steps + 1, 0);
  for (Index t = 0; t < steps; ++t) offset[t + 1] = offset[t] + cache.width[t];
  const Index total = offset[steps];
  const bool gru = cell.kind == CellKind::GRU;
  Matrix<Scalar> all_dgates(gate_count(cell.kind) * h, total);
  Matrix<Scalar> all_inputs(model.input_dim(), total);
  Matrix<Scalar> all_prev(h, total);
  Matrix<Scalar> all_reset(gru ? h : 0, gru ? total : 0);

  Matrix<Scalar> dh = Matrix<Scalar>::Zero(h, n);
  Matrix<Scalar> dc = Matrix<Scalar>::Zero(h, n);
  for (Index t = steps - 1; t >= 0; --t) {
    const Index w = cache.width[t];
    auto dh_w = dh.leftCols(w);
    dh_w += dhidden[t];
    const auto m = cache.mask.row(t).head(w);
    const auto h_prev = cache.hidden[t].leftCols(w);
    const Matrix<Scalar>& gates = cache.gates[t];
    auto dgates = all_dgates.middleCols(offset[t], w);
    all_inputs.middleCols(offset[t], w) = batch.steps[t].leftCols(w);
    all_prev.middleCols(offset[t], w) = h_prev;
    Matrix<Scalar> dh_prev;
    if (cell.kind == CellKind::GRU) {
      const auto z = gates.topRows(h).array();
      const auto r = gates.middleRows(h, h).array();
      const auto cand = gates.bottomRows(h).array();
      dgates.bottomRows(h) =
          (dh_w.array() * (Scalar(1) - z) * (Scalar(1) - cand.square())).matrix();
      dgates.topRows(h) = (dh_w.array() * (h_prev.array() - cand) * z * (Scalar(1) - z)).matrix();
      const Matrix<Scalar> dreset_hidden =
          cell.recurrent_weights.bottomRows(h).transpose() * dgates.bottomRows(h);
      dgates.middleRows(h, h) =
          (dreset_hidden.array() * h_prev.array() * r * (Scalar(1) - r)).matrix();
      dgates.array().rowwise() *= m;
      dh_prev = (dh_w.array() * z + dreset_hidden.array() * r).matrix();
      dh_prev.noalias() +=
          cell.recurrent_weights.topRows(2 * h).transpose() * dgates.topRows(2 * h);
      all_reset.middleCols(offset[t], w) = cache.reset_hidden[t];
    } else {
      auto dc_w = dc.leftCols(w);
      const auto i = gates.topRows(h).array();
      const auto f = gates.middleRows(h, h).array();
      const auto g = gates.middleRows(2 * h, h).array();
      const auto o = gates.bottomRows(h).array();
      const auto tc = cache.cell_tanh[t].array();
      const Matrix<Scalar> dcell =
          (dc_w.array() + dh_w.array() * o * (Scalar(1) - tc.square())).matrix();
      dgates.topRows(h) = (dcell.array() * g * i * (Scalar(1) - i)).matrix();
      dgates.middleRows(h, h) =
          (dcell.array() * cache.cell_state[t].leftCols(w).array() * f * (Scalar(1) - f)).matrix();
      dgates.middleRows(2 * h, h) = (dcell.array() * i * (Scalar(1) - g.square())).matrix();
      dgates.bottomRows(h) = (dh_w.array() * tc * o * (Scalar(1) - o)).matrix();
      dgates.array().rowwise() *= m;
      dh_prev.noalias() = cell.recurrent_weights.transpose() * dgates;
      dc_w =
          ((dcell.array() * f).rowwise() * m + dc_w.array().rowwise() * (Scalar(1) - m)).matrix();
    }
    // Masked steps pass the incoming gradient straight through.
    dh_w = (dh_prev.array().rowwise() * m + dh_w.array().rowwise() * (Scalar(1) - m)).matrix();
  }
  grad.cell.input_weights.noalias() = all_dgates * all_inputs.transpose();
  grad.cell.bias = all_dgates.rowwise().sum();
  if (gru) {
    grad.cell.recurrent_weights.topRows(2 * h).noalias() =
        all_dgates.topRows(2 * h) * all_prev.transpose();
    grad.cell.recurrent_weights.bottomRows(h).noalias() =
        all_dgates.bottomRows(h) * all_reset.transpose();
  } else {
    grad.cell.recurrent_weights.noalias() = all_dgates * all_prev.transpose();
  }
  return out;
}

template <typename Scalar>
LossAndGradient<Scalar> model_backward(const SequenceClassifier<Scalar>& model,
                                       const SequenceBatch<Scalar>& batch,
                                       std::span<const Index> targets,
                                       const Vector<Scalar>& class_weights = {}) {
  return model_backward_per_sample(model, batch, targets,
                                   sample_weights_for(targets, class_weights));
}

/// Hidden-state sequence (steps x hidden) for one unpadded series (steps x input).
template <typename Scalar, typename Derived>
Matrix<Scalar> hidden_states(const RecurrentCellParams<Scalar>& cell,
                             const Eigen::MatrixBase<Derived>& series) {
  Matrix<Scalar> out(series.rows(), cell.hidden_dim());
  Matrix<Scalar> h = Matrix<Scalar>::Zero(cell.hidden_dim(), 1);
  Matrix<Scalar> c = h;
  for (Index t = 0; t < series.rows(); ++t) {
    const Matrix<Scalar> x = series.row(t).transpose().template cast<Scalar>();
    if (cell.kind == CellKind::GRU) {
      h = gru_step<Scalar>(cell, x, h);
    } else {
      auto [hn, cn] = lstm_step<Scalar>(cell, x, h, c);
      h = std::move(hn);
      c = std::move(cn);
    }
    out.row(t) = h.transpose();
  }
  return out;
}

}  // namespace taxo
