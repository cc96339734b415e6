#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "icpmon/types.hpp"

namespace icpmon {

/// Default rule of thumb for the hidden width: floor(2*d_in/3) + C.
inline std::int32_t default_hidden_width(std::int32_t d_in, std::int32_t num_classes) {
  if (d_in < 1) throw ConfigError("input dimension must be at least 1");
  if (num_classes < 2) throw ConfigError("need at least 2 classes");
  return static_cast<std::int32_t>(2 * d_in / 3 + num_classes);
}

/// One-hidden-layer rectifier classifier. The hidden activations double as
/// the learned embedding. Inputs are standardized with the training-split
/// statistics stored in the model, so raw sensor rows feed in directly.
/// Plain struct on purpose: training owns the invariants, serialization
/// and the finite-difference tests want the raw buffers.
struct MlpModel {
  std::int32_t d_in = 0;
  std::int32_t hidden = 0;
  std::int32_t num_classes = 0;
  std::vector<double> w1;  // hidden x d_in, row-major
  std::vector<double> b1;  // hidden
  std::vector<double> w2;  // num_classes x hidden, row-major
  std::vector<double> b2;  // num_classes
  std::vector<double> input_mean;   // d_in
  std::vector<double> input_scale;  // d_in, standard deviation clamped off 0

  void standardize(std::span<const double> x, std::vector<double>& out) const {
    if (static_cast<std::int32_t>(x.size()) != d_in)
      throw DimensionMismatchError("input length " + std::to_string(x.size()) +
                                   " does not match model input dimension " +
                                   std::to_string(d_in));
    out.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
      out[i] = (x[i] - input_mean[i]) / input_scale[i];
  }
};

struct ForwardResult {
  std::vector<double> embedding;  // rectified hidden activations, length h
  std::vector<double> logits;     // length C
  std::vector<double> probs;      // softmax(logits)
};

namespace detail {

inline void forward_standardized(const MlpModel& m, std::span<const double> xs,
                                 ForwardResult& out) {
  const std::size_t h = static_cast<std::size_t>(m.hidden);
  const std::size_t d = static_cast<std::size_t>(m.d_in);
  const std::size_t C = static_cast<std::size_t>(m.num_classes);
  out.embedding.assign(h, 0.0);
  for (std::size_t j = 0; j < h; ++j) {
    const double* row = m.w1.data() + j * d;
    double z = m.b1[j];
    for (std::size_t i = 0; i < d; ++i) z += row[i] * xs[i];
    out.embedding[j] = z > 0.0 ? z : 0.0;
  }
  out.logits.assign(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    const double* row = m.w2.data() + c * h;
    double z = m.b2[c];
    for (std::size_t j = 0; j < h; ++j) z += row[j] * out.embedding[j];
    out.logits[c] = z;
  }
  out.probs.assign(C, 0.0);
  double zmax = out.logits[0];
  for (double z : out.logits) zmax = std::max(zmax, z);
  double sum = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    out.probs[c] = std::exp(out.logits[c] - zmax);
    sum += out.probs[c];
  }
  for (double& p : out.probs) p /= sum;
}

// Stable -log softmax(z)[y].
inline double cross_entropy(const std::vector<double>& logits, LabelId y) {
  double zmax = logits[0];
  for (double z : logits) zmax = std::max(zmax, z);
  double lse = 0.0;
  for (double z : logits) lse += std::exp(z - zmax);
  return std::log(lse) + zmax - logits[static_cast<std::size_t>(y)];
}

}  // namespace detail

inline ForwardResult forward(const MlpModel& m, std::span<const double> x) {
  std::vector<double> xs;
  m.standardize(x, xs);
  ForwardResult out;
  detail::forward_standardized(m, xs, out);
  return out;
}

/// Gradient buffers matching the model's weight layout.
struct Gradients {
  std::vector<double> w1, b1, w2, b2;

  explicit Gradients(const MlpModel& m)
      : w1(m.w1.size(), 0.0),
        b1(m.b1.size(), 0.0),
        w2(m.w2.size(), 0.0),
        b2(m.b2.size(), 0.0) {}

  void zero() {
    std::fill(w1.begin(), w1.end(), 0.0);
    std::fill(b1.begin(), b1.end(), 0.0);
    std::fill(w2.begin(), w2.end(), 0.0);
    std::fill(b2.begin(), b2.end(), 0.0);
  }
};

namespace detail {

// Adds one example's cross-entropy gradient to `g`; returns its loss.
// `xs` is already standardized.
inline double backward_one(const MlpModel& m, std::span<const double> xs,
                           LabelId y, Gradients& g, ForwardResult& scratch) {
  const std::size_t h = static_cast<std::size_t>(m.hidden);
  const std::size_t d = static_cast<std::size_t>(m.d_in);
  const std::size_t C = static_cast<std::size_t>(m.num_classes);
  forward_standardized(m, xs, scratch);
  const double loss = cross_entropy(scratch.logits, y);

  // dL/dz2 = p - onehot(y)
  for (std::size_t c = 0; c < C; ++c) {
    const double dz2 = scratch.probs[c] - (c == static_cast<std::size_t>(y) ? 1.0 : 0.0);
    double* row = g.w2.data() + c * h;
    const double* emb = scratch.embedding.data();
    for (std::size_t j = 0; j < h; ++j) row[j] += dz2 * emb[j];
    g.b2[c] += dz2;
  }
  // dL/dz1 through the rectifier gate
  for (std::size_t j = 0; j < h; ++j) {
    if (scratch.embedding[j] <= 0.0) continue;  // gate closed
    double da = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      const double dz2 =
          scratch.probs[c] - (c == static_cast<std::size_t>(y) ? 1.0 : 0.0);
      da += m.w2[c * h + j] * dz2;
    }
    double* row = g.w1.data() + j * d;
    for (std::size_t i = 0; i < d; ++i) row[i] += da * xs[i];
    g.b1[j] += da;
  }
  return loss;
}

}  // namespace detail

/// Mean cross-entropy over a batch of raw inputs.
inline double batch_loss(const MlpModel& m,
                         std::span<const std::vector<double>> xs,
                         std::span<const LabelId> ys) {
  if (xs.empty() || xs.size() != ys.size())
    throw ConfigError("batch inputs and labels must be nonempty and equal-length");
  std::vector<double> std_x;
  ForwardResult scratch;
  double total = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    m.standardize(xs[i], std_x);
    detail::forward_standardized(m, std_x, scratch);
    total += detail::cross_entropy(scratch.logits, ys[i]);
  }
  return total / static_cast<double>(xs.size());
}

/// Mean cross-entropy and its analytic gradient over a batch of raw inputs.
inline double batch_gradients(const MlpModel& m,
                              std::span<const std::vector<double>> xs,
                              std::span<const LabelId> ys, Gradients& g) {
  if (xs.empty() || xs.size() != ys.size())
    throw ConfigError("batch inputs and labels must be nonempty and equal-length");
  g.zero();
  std::vector<double> std_x;
  ForwardResult scratch;
  double total = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    m.standardize(xs[i], std_x);
    total += detail::backward_one(m, std_x, ys[i], g, scratch);
  }
  const double inv_n = 1.0 / static_cast<double>(xs.size());
  for (double& v : g.w1) v *= inv_n;
  for (double& v : g.b1) v *= inv_n;
  for (double& v : g.w2) v *= inv_n;
  for (double& v : g.b2) v *= inv_n;
  return total * inv_n;
}

struct TrainConfig {
  double learning_rate = 0.05;
  std::int32_t epochs = 200;
  std::int32_t batch_size = 32;
  std::uint64_t seed = 1;
  std::int32_t early_stop_patience = 10;
  /// Share of the training split carved off (seeded) to drive early
  /// stopping; 0 disables early stopping entirely.
  double holdout_fraction = 0.1;
  /// 0 means "use default_hidden_width(d_in, C)".
  std::int32_t hidden = 0;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (epochs < 1) throw ConfigError("epochs must be positive");
    if (batch_size < 1) throw ConfigError("batch size must be positive");
    if (early_stop_patience < 1) throw ConfigError("patience must be positive");
    if (holdout_fraction < 0.0 || holdout_fraction >= 1.0)
      throw ConfigError("holdout fraction must lie in [0, 1)");
    if (hidden < 0) throw ConfigError("hidden width cannot be negative");
  }
};

/// Per-epoch record, filled only when requested.
struct TrainTrace {
  std::vector<double> train_loss;
  std::vector<double> holdout_loss;
  std::int32_t epochs_run = 0;
};

/// Seeded mini-batch SGD on cross-entropy with Xavier-uniform init and
/// early stopping against an internal holdout carve. Bit-identical runs
/// for a fixed seed on a fixed platform.
inline MlpModel train(const Dataset& ds, const TrainConfig& cfg,
                      TrainTrace* trace = nullptr) {
  cfg.validate();
  if (ds.empty()) throw DataError("empty training set");
  const std::size_t n = ds.size();
  const std::size_t d = static_cast<std::size_t>(ds.embedding_dim);
  const std::int32_t C = ds.universe.num_classes;
  if (d == 0) throw DataError("training examples carry no input vectors");

  std::vector<LabelId> labels(n);
  {
    std::vector<bool> seen(static_cast<std::size_t>(C), false);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& ex = ds.examples[i];
      if (!ex.features.has_embedding())
        throw FeatureMissingError("example " + ex.id() + " carries no input vector");
      if (ex.label < 0 || ex.label >= C)
        throw DataError("example " + ex.id() + " label outside the universe");
      labels[i] = ex.label;
      seen[static_cast<std::size_t>(ex.label)] = true;
    }
    std::size_t present = 0;
    for (bool s : seen) present += s ? 1 : 0;
    if (present < 2)
      throw DataError("training data is single-class; nothing to separate");
  }

  MlpModel m;
  m.d_in = static_cast<std::int32_t>(d);
  m.hidden = cfg.hidden > 0 ? cfg.hidden
                            : default_hidden_width(m.d_in, C);
  m.num_classes = C;

  // Standardizer from the full training split.
  m.input_mean.assign(d, 0.0);
  m.input_scale.assign(d, 0.0);
  for (const auto& ex : ds.examples)
    for (std::size_t i = 0; i < d; ++i) m.input_mean[i] += ex.features.embedding[i];
  for (double& v : m.input_mean) v /= static_cast<double>(n);
  for (const auto& ex : ds.examples)
    for (std::size_t i = 0; i < d; ++i) {
      const double diff = ex.features.embedding[i] - m.input_mean[i];
      m.input_scale[i] += diff * diff;
    }
  for (double& v : m.input_scale) {
    v = std::sqrt(v / static_cast<double>(n));
    if (v == 0.0) v = 1.0;  // constant feature: pass through centered
  }

  // Standardize once up front; the training loop reads this matrix.
  std::vector<double> X(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k)
      X[i * d + k] =
          (ds.examples[i].features.embedding[k] - m.input_mean[k]) / m.input_scale[k];

  std::mt19937 rng(static_cast<std::mt19937::result_type>(cfg.seed));
  const std::size_t h = static_cast<std::size_t>(m.hidden);
  const std::size_t Cs = static_cast<std::size_t>(C);
  {
    const double lim1 = std::sqrt(6.0 / static_cast<double>(d + h));
    std::uniform_real_distribution<double> u1(-lim1, lim1);
    m.w1.resize(h * d);
    for (double& w : m.w1) w = u1(rng);
    m.b1.assign(h, 0.0);
    const double lim2 = std::sqrt(6.0 / static_cast<double>(h + Cs));
    std::uniform_real_distribution<double> u2(-lim2, lim2);
    m.w2.resize(Cs * h);
    for (double& w : m.w2) w = u2(rng);
    m.b2.assign(Cs, 0.0);
  }

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  const std::size_t n_hold =
      std::min(n - 1, static_cast<std::size_t>(cfg.holdout_fraction *
                                               static_cast<double>(n)));
  std::vector<std::size_t> hold_idx(perm.begin(),
                                    perm.begin() + static_cast<std::ptrdiff_t>(n_hold));
  std::vector<std::size_t> train_idx(perm.begin() + static_cast<std::ptrdiff_t>(n_hold),
                                     perm.end());

  const auto mean_loss_over = [&](const std::vector<std::size_t>& idx) {
    ForwardResult scratch;
    double total = 0.0;
    for (std::size_t i : idx) {
      detail::forward_standardized(
          m, std::span<const double>(X.data() + i * d, d), scratch);
      total += detail::cross_entropy(scratch.logits, labels[i]);
    }
    return total / static_cast<double>(idx.size());
  };

  Gradients g(m);
  ForwardResult scratch;
  double best_loss = std::numeric_limits<double>::infinity();
  MlpModel best = m;
  std::int32_t epochs_without_gain = 0;

  for (std::int32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(train_idx.begin(), train_idx.end(), rng);
    for (std::size_t start = 0; start < train_idx.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop =
          std::min(train_idx.size(), start + static_cast<std::size_t>(cfg.batch_size));
      g.zero();
      for (std::size_t b = start; b < stop; ++b) {
        const std::size_t i = train_idx[b];
        detail::backward_one(m, std::span<const double>(X.data() + i * d, d),
                             labels[i], g, scratch);
      }
      const double step = cfg.learning_rate / static_cast<double>(stop - start);
      for (std::size_t k = 0; k < m.w1.size(); ++k) m.w1[k] -= step * g.w1[k];
      for (std::size_t k = 0; k < m.b1.size(); ++k) m.b1[k] -= step * g.b1[k];
      for (std::size_t k = 0; k < m.w2.size(); ++k) m.w2[k] -= step * g.w2[k];
      for (std::size_t k = 0; k < m.b2.size(); ++k) m.b2[k] -= step * g.b2[k];
    }

    if (trace) {
      trace->train_loss.push_back(mean_loss_over(train_idx));
      trace->epochs_run = epoch + 1;
    }
    if (!hold_idx.empty()) {
      const double hl = mean_loss_over(hold_idx);
      if (trace) trace->holdout_loss.push_back(hl);
      if (hl < best_loss) {
        best_loss = hl;
        best = m;
        epochs_without_gain = 0;
      } else if (++epochs_without_gain >= cfg.early_stop_patience) {
        break;
      }
    }
  }

  if (!hold_idx.empty()) m = std::move(best);
  return m;
}

/// Runs the model over a raw tabular dataset and emits the learned
/// features: hidden-layer embedding, logits, probs, labels kept.
inline Dataset export_features(const MlpModel& m, const Dataset& ds) {
  if (ds.empty()) throw DataError("empty dataset");
  Dataset out;
  out.universe = ds.universe;
  out.role = ds.role;
  out.embedding_dim = m.hidden;
  out.examples.reserve(ds.size());
  for (const auto& ex : ds.examples) {
    if (!ex.features.has_embedding())
      throw FeatureMissingError("example " + ex.id() + " carries no input vector");
    ForwardResult f = forward(m, ex.features.embedding);
    LabeledExample converted;
    converted.features.id = ex.features.id;
    converted.features.embedding = std::move(f.embedding);
    converted.features.logits = std::move(f.logits);
    converted.features.probs = std::move(f.probs);
    converted.label = ex.label;
    out.examples.push_back(std::move(converted));
  }
  return out;
}

}  // namespace icpmon
