#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "icpmon/kdtree.hpp"
#include "icpmon/types.hpp"

namespace icpmon {

/// Nonconformity score: larger means stranger. +infinity is a legal value
/// and compares >= everything, including itself.
using Score = double;

inline constexpr double kInfiniteScore = std::numeric_limits<double>::infinity();

enum class NcKind : std::uint8_t {
  Knn = 0,
  OneNn = 1,
  NearestCentroid = 2,
  Hinge = 3,
  Margin = 4,
  Brier = 5,
  TsHinge = 6,
  TsMargin = 7,
  TsBrier = 8,
};

inline const char* to_string(NcKind kind) {
  switch (kind) {
    case NcKind::Knn: return "knn";
    case NcKind::OneNn: return "1nn";
    case NcKind::NearestCentroid: return "centroid";
    case NcKind::Hinge: return "hinge";
    case NcKind::Margin: return "margin";
    case NcKind::Brier: return "brier";
    case NcKind::TsHinge: return "ts-hinge";
    case NcKind::TsMargin: return "ts-margin";
    case NcKind::TsBrier: return "ts-brier";
  }
  return "?";
}

inline NcKind nc_kind_from_string(const std::string& name) {
  for (int k = 0; k <= static_cast<int>(NcKind::TsBrier); ++k) {
    const NcKind kind = static_cast<NcKind>(k);
    if (name == to_string(kind)) return kind;
  }
  throw ConfigError("unknown nonconformity function '" + name + "'");
}

inline bool uses_embeddings(NcKind kind) {
  return kind == NcKind::Knn || kind == NcKind::OneNn ||
         kind == NcKind::NearestCentroid;
}

inline bool uses_temperature(NcKind kind) {
  return kind == NcKind::TsHinge || kind == NcKind::TsMargin ||
         kind == NcKind::TsBrier;
}

/// Softmax of z / T with max subtraction; sums to 1 within 1e-9.
inline std::vector<double> apply_temperature(std::span<const double> logits,
                                             double temperature) {
  if (!(temperature > 0.0))
    throw ConfigError("temperature must be positive, got " +
                      std::to_string(temperature));
  if (logits.empty()) throw DataError("empty logit vector");
  double zmax = -std::numeric_limits<double>::infinity();
  for (double z : logits) zmax = std::max(zmax, z / temperature);
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] / temperature - zmax);
    sum += out[i];
  }
  for (double& p : out) p /= sum;
  return out;
}

namespace detail {

// x/0 with x > 0 and 0/0 both map to +infinity (maximally strange);
// 0/positive is a plain 0.
inline Score distance_ratio(double numerator, double denominator) {
  if (denominator == 0.0) return kInfiniteScore;
  return numerator / denominator;
}

inline void check_label(std::span<const double> p, LabelId y) {
  if (y < 0 || static_cast<std::size_t>(y) >= p.size())
    throw ConfigError("candidate label " + std::to_string(y) +
                      " outside the probability vector");
}

// Smallest and second-smallest values with the arg of the smallest.
struct TwoMins {
  double best = std::numeric_limits<double>::infinity();
  double second = std::numeric_limits<double>::infinity();
  std::size_t best_arg = 0;

  void offer(double v, std::size_t arg) {
    if (v < best) {
      second = best;
      best = v;
      best_arg = arg;
    } else if (v < second) {
      second = v;
    }
  }
};

}  // namespace detail

/// Probability-layer rule: 1 - P(y|x).
inline Score hinge_score(std::span<const double> probs, LabelId y) {
  detail::check_label(probs, y);
  return 1.0 - probs[static_cast<std::size_t>(y)];
}

/// Probability-layer rule: max_{i != y} P(i|x) - P(y|x).
inline Score margin_score(std::span<const double> probs, LabelId y) {
  detail::check_label(probs, y);
  if (probs.size() < 2) throw DataError("margin needs at least 2 classes");
  double best_other = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < probs.size(); ++i)
    if (i != static_cast<std::size_t>(y)) best_other = std::max(best_other, probs[i]);
  return best_other - probs[static_cast<std::size_t>(y)];
}

/// Probability-layer rule: mean squared gap to the one-hot target at y.
inline Score brier_score(std::span<const double> probs, LabelId y) {
  detail::check_label(probs, y);
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double target = i == static_cast<std::size_t>(y) ? 1.0 : 0.0;
    const double diff = target - probs[i];
    acc += diff * diff;
  }
  return acc / static_cast<double>(probs.size());
}

/// Per-class mean of the training embeddings.
inline std::vector<std::vector<double>> compute_centroids(const Dataset& train) {
  const std::int32_t C = train.universe.num_classes;
  if (train.empty()) throw DataError("cannot compute centroids of an empty dataset");
  std::vector<std::vector<double>> sums(
      static_cast<std::size_t>(C),
      std::vector<double>(static_cast<std::size_t>(train.embedding_dim), 0.0));
  std::vector<std::size_t> counts(static_cast<std::size_t>(C), 0);
  for (const auto& ex : train.examples) {
    if (!ex.features.has_embedding())
      throw FeatureMissingError("example " + ex.id() + " carries no embedding");
    if (static_cast<std::int32_t>(ex.features.embedding.size()) !=
        train.embedding_dim)
      throw DimensionMismatchError("example " + ex.id() +
                                   " embedding length differs from dataset dimension");
    if (ex.label < 0 || ex.label >= C)
      throw DataError("example " + ex.id() + " label outside the universe");
    auto& sum = sums[static_cast<std::size_t>(ex.label)];
    const auto& v = ex.features.embedding;
    for (std::size_t i = 0; i < v.size(); ++i) sum[i] += v[i];
    ++counts[static_cast<std::size_t>(ex.label)];
  }
  for (std::int32_t c = 0; c < C; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0)
      throw DataError("class " + train.universe.name_of(c) +
                      " has no training examples; cannot form its centroid");
    for (double& x : sums[static_cast<std::size_t>(c)])
      x /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
  }
  return sums;
}

/// A named, configured scoring rule. Immutable once constructed; safe to
/// share across threads. Exactly the state its kind needs is populated:
/// a neighbor index for knn/1nn, centroids for centroid, a temperature
/// for the ts-* kinds.
class NonconformityFunction {
 public:
  static constexpr int kDefaultK = 15;

  static NonconformityFunction knn(std::shared_ptr<const NeighborIndex> index,
                                   int k = kDefaultK) {
    if (!index) throw ConfigError("knn requires a neighbor index");
    if (k < 1) throw ConfigError("k must be at least 1");
    NonconformityFunction fn(NcKind::Knn);
    fn.index_ = std::move(index);
    fn.k_ = k;
    return fn;
  }

  static NonconformityFunction one_nn(std::shared_ptr<const NeighborIndex> index) {
    if (!index) throw ConfigError("1nn requires a neighbor index");
    NonconformityFunction fn(NcKind::OneNn);
    fn.index_ = std::move(index);
    return fn;
  }

  static NonconformityFunction nearest_centroid(
      std::vector<std::vector<double>> centroids) {
    if (centroids.size() < 2)
      throw ConfigError("nearest-centroid requires at least 2 class centroids");
    const std::size_t d = centroids.front().size();
    for (const auto& c : centroids)
      if (c.size() != d)
        throw DimensionMismatchError("centroid dimensions are inconsistent");
    NonconformityFunction fn(NcKind::NearestCentroid);
    fn.centroids_ = std::move(centroids);
    return fn;
  }

  static NonconformityFunction hinge() { return NonconformityFunction(NcKind::Hinge); }
  static NonconformityFunction margin() { return NonconformityFunction(NcKind::Margin); }
  static NonconformityFunction brier() { return NonconformityFunction(NcKind::Brier); }

  static NonconformityFunction ts_hinge(double temperature) {
    return with_temperature(NcKind::TsHinge, temperature);
  }
  static NonconformityFunction ts_margin(double temperature) {
    return with_temperature(NcKind::TsMargin, temperature);
  }
  static NonconformityFunction ts_brier(double temperature) {
    return with_temperature(NcKind::TsBrier, temperature);
  }

  NcKind kind() const { return kind_; }
  int k() const { return k_; }
  double temperature() const { return temperature_; }
  const std::vector<std::vector<double>>& centroids() const { return centroids_; }
  const std::shared_ptr<const NeighborIndex>& index() const { return index_; }

  /// Scores one candidate label.
  Score score(const Features& ex, LabelId y) const;

  /// Scores every label in [0, num_classes) at once; shares the neighbor
  /// lookup or softmax across candidates, which is what the online monitor
  /// path calls.
  std::vector<Score> score_all(const Features& ex, std::int32_t num_classes) const;

 private:
  explicit NonconformityFunction(NcKind kind) : kind_(kind) {}

  static NonconformityFunction with_temperature(NcKind kind, double temperature) {
    if (!(temperature > 0.0))
      throw ConfigError("temperature must be positive, got " +
                        std::to_string(temperature));
    NonconformityFunction fn(kind);
    fn.temperature_ = temperature;
    return fn;
  }

  const std::vector<double>& effective_probs(const Features& ex,
                                             std::vector<double>& scratch) const {
    if (uses_temperature(kind_)) {
      if (!ex.has_logits())
        throw FeatureMissingError("example " + ex.id +
                                  " carries no logits; temperature scaling needs them");
      scratch = apply_temperature(ex.logits, temperature_);
      return scratch;
    }
    if (ex.has_probs()) return ex.probs;
    if (ex.has_logits()) {
      scratch = apply_temperature(ex.logits, 1.0);
      return scratch;
    }
    throw FeatureMissingError("example " + ex.id +
                              " carries neither probabilities nor logits");
  }

  const std::vector<double>& require_embedding(const Features& ex) const {
    if (!ex.has_embedding())
      throw FeatureMissingError("example " + ex.id + " carries no embedding");
    return ex.embedding;
  }

  NcKind kind_;
  int k_ = kDefaultK;
  double temperature_ = 1.0;
  std::vector<std::vector<double>> centroids_;
  std::shared_ptr<const NeighborIndex> index_;
};

/// Count of the k nearest training labels that differ from the candidate.
inline Score knn_score(const NonconformityFunction& fn,
                       std::span<const double> embedding, LabelId y) {
  if (fn.kind() != NcKind::Knn) throw ConfigError("knn_score on a non-knn function");
  const auto hits = fn.index()->query_knn(embedding, static_cast<std::size_t>(fn.k()));
  std::size_t different = 0;
  for (const auto& h : hits)
    if (h.label != y) ++different;
  return static_cast<Score>(different);
}

/// Nearest same-class distance over nearest other-class distance.
inline Score one_nn_score(const NonconformityFunction& fn,
                          std::span<const double> embedding, LabelId y) {
  if (fn.kind() != NcKind::OneNn) throw ConfigError("one_nn_score on a non-1nn function");
  const auto per_class = fn.index()->query_nearest_per_class(embedding);
  const auto same_it = per_class.find(y);
  if (same_it == per_class.end())
    throw CalibrationDomainError("class " + std::to_string(y) +
                                 " is absent from the training index");
  double other = std::numeric_limits<double>::infinity();
  for (const auto& [label, dist] : per_class)
    if (label != y) other = std::min(other, dist);
  if (!std::isfinite(other))
    throw CalibrationDomainError("no other class present in the training index");
  return detail::distance_ratio(same_it->second, other);
}

/// Distance to the candidate's centroid over the nearest other centroid.
inline Score centroid_score(const NonconformityFunction& fn,
                            std::span<const double> embedding, LabelId y) {
  if (fn.kind() != NcKind::NearestCentroid)
    throw ConfigError("centroid_score on a non-centroid function");
  const auto& centroids = fn.centroids();
  if (y < 0 || static_cast<std::size_t>(y) >= centroids.size())
    throw ConfigError("candidate label " + std::to_string(y) +
                      " has no centroid");
  if (embedding.size() != centroids.front().size())
    throw DimensionMismatchError("query dimension does not match centroid dimension");

  const auto dist_to = [&](const std::vector<double>& c) {
    double acc = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) {
      const double diff = c[i] - embedding[i];
      acc += diff * diff;
    }
    return std::sqrt(acc);
  };

  const double same = dist_to(centroids[static_cast<std::size_t>(y)]);
  double other = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c)
    if (c != static_cast<std::size_t>(y)) other = std::min(other, dist_to(centroids[c]));
  return detail::distance_ratio(same, other);
}

inline Score NonconformityFunction::score(const Features& ex, LabelId y) const {
  std::vector<double> scratch;
  switch (kind_) {
    case NcKind::Knn:
      return knn_score(*this, require_embedding(ex), y);
    case NcKind::OneNn:
      return one_nn_score(*this, require_embedding(ex), y);
    case NcKind::NearestCentroid:
      return centroid_score(*this, require_embedding(ex), y);
    case NcKind::Hinge:
    case NcKind::TsHinge:
      return hinge_score(effective_probs(ex, scratch), y);
    case NcKind::Margin:
    case NcKind::TsMargin:
      return margin_score(effective_probs(ex, scratch), y);
    case NcKind::Brier:
    case NcKind::TsBrier:
      return brier_score(effective_probs(ex, scratch), y);
  }
  throw ConfigError("unhandled nonconformity kind");
}

inline std::vector<Score> NonconformityFunction::score_all(
    const Features& ex, std::int32_t num_classes) const {
  if (num_classes < 2) throw ConfigError("need at least 2 classes to score");
  const std::size_t C = static_cast<std::size_t>(num_classes);
  std::vector<Score> scores(C, 0.0);

  switch (kind_) {
    case NcKind::Knn: {
      const auto& v = require_embedding(ex);
      const auto hits = index_->query_knn(v, static_cast<std::size_t>(k_));
      std::vector<std::size_t> same(C, 0);
      for (const auto& h : hits) {
        if (h.label < 0 || static_cast<std::size_t>(h.label) >= C)
          throw DataError("training index label outside the universe");
        ++same[static_cast<std::size_t>(h.label)];
      }
      for (std::size_t y = 0; y < C; ++y)
        scores[y] = static_cast<Score>(hits.size() - same[y]);
      return scores;
    }
    case NcKind::OneNn: {
      const auto& v = require_embedding(ex);
      std::vector<double> best_sq;
      index_->nearest_per_class_squared(v, best_sq);
      if (best_sq.size() < C)
        best_sq.resize(C, std::numeric_limits<double>::infinity());
      detail::TwoMins mins;
      for (std::size_t c = 0; c < C; ++c)
        if (std::isfinite(best_sq[c])) mins.offer(best_sq[c], c);
      for (std::size_t y = 0; y < C; ++y) {
        if (!std::isfinite(best_sq[y]))
          throw CalibrationDomainError("class " + std::to_string(y) +
                                       " is absent from the training index");
        const double other_sq = mins.best_arg == y ? mins.second : mins.best;
        if (!std::isfinite(other_sq))
          throw CalibrationDomainError("no other class present in the training index");
        scores[y] = detail::distance_ratio(std::sqrt(best_sq[y]), std::sqrt(other_sq));
      }
      return scores;
    }
    case NcKind::NearestCentroid: {
      const auto& v = require_embedding(ex);
      if (centroids_.size() != C)
        throw ConfigError("centroid count does not match the class count");
      if (v.size() != centroids_.front().size())
        throw DimensionMismatchError("query dimension does not match centroid dimension");
      std::vector<double> dists(C, 0.0);
      detail::TwoMins mins;
      for (std::size_t c = 0; c < C; ++c) {
        double acc = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) {
          const double diff = centroids_[c][i] - v[i];
          acc += diff * diff;
        }
        dists[c] = std::sqrt(acc);
        mins.offer(dists[c], c);
      }
      for (std::size_t y = 0; y < C; ++y) {
        const double other = mins.best_arg == y ? mins.second : mins.best;
        scores[y] = detail::distance_ratio(dists[y], other);
      }
      return scores;
    }
    case NcKind::Hinge:
    case NcKind::TsHinge:
    case NcKind::Margin:
    case NcKind::TsMargin:
    case NcKind::Brier:
    case NcKind::TsBrier: {
      std::vector<double> scratch;
      const auto& p = effective_probs(ex, scratch);
      if (p.size() != C)
        throw DimensionMismatchError("probability vector length differs from class count");
      if (kind_ == NcKind::Hinge || kind_ == NcKind::TsHinge) {
        for (std::size_t y = 0; y < C; ++y) scores[y] = 1.0 - p[y];
      } else if (kind_ == NcKind::Margin || kind_ == NcKind::TsMargin) {
        // max over the other labels via the two largest probabilities
        std::size_t arg1 = 0;
        double max1 = -1.0, max2 = -1.0;
        for (std::size_t i = 0; i < C; ++i) {
          if (p[i] > max1) {
            max2 = max1;
            max1 = p[i];
            arg1 = i;
          } else if (p[i] > max2) {
            max2 = p[i];
          }
        }
        for (std::size_t y = 0; y < C; ++y)
          scores[y] = (y == arg1 ? max2 : max1) - p[y];
      } else {
        // same summation order as brier_score so both paths agree bit-for-bit
        for (std::size_t y = 0; y < C; ++y)
          scores[y] = brier_score(p, static_cast<LabelId>(y));
      }
      return scores;
    }
  }
  throw ConfigError("unhandled nonconformity kind");
}

/// Mean negative log likelihood of temperature-scaled probabilities at the
/// true labels. The objective fit_temperature minimizes.
inline double temperature_nll(const Dataset& validation, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (validation.empty()) throw DataError("empty validation set");
  double total = 0.0;
  for (const auto& ex : validation.examples) {
    if (!ex.features.has_logits())
      throw FeatureMissingError("example " + ex.id() +
                                " carries no logits; temperature fitting needs them");
    const auto& z = ex.features.logits;
    if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= z.size())
      throw DataError("example " + ex.id() + " label outside the logit vector");
    double zmax = -std::numeric_limits<double>::infinity();
    for (double zi : z) zmax = std::max(zmax, zi / temperature);
    double lse = 0.0;
    for (double zi : z) lse += std::exp(zi / temperature - zmax);
    lse = std::log(lse) + zmax;
    total += lse - z[static_cast<std::size_t>(ex.label)] / temperature;
  }
  return total / static_cast<double>(validation.size());
}

/// Fits the temperature by golden-section search of the mean NLL over
/// [0.05, 50], to absolute tolerance 1e-4 on T.
inline double fit_temperature(const Dataset& validation) {
  if (validation.empty()) throw DataError("empty validation set");
  std::vector<bool> seen(static_cast<std::size_t>(validation.universe.num_classes),
                         false);
  for (const auto& ex : validation.examples) {
    if (ex.label >= 0 &&
        static_cast<std::size_t>(ex.label) < seen.size())
      seen[static_cast<std::size_t>(ex.label)] = true;
  }
  for (std::size_t c = 0; c < seen.size(); ++c)
    if (!seen[c])
      throw DataError("class " + validation.universe.name_of(static_cast<LabelId>(c)) +
                      " has no validation examples");

  constexpr double kLo = 0.05, kHi = 50.0, kTol = 1e-4;
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = kLo, b = kHi;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = temperature_nll(validation, c);
  double fd = temperature_nll(validation, d);
  while (b - a > kTol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = temperature_nll(validation, c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = temperature_nll(validation, d);
    }
  }
  return (a + b) / 2.0;
}

/// Free-function form of NonconformityFunction::score.
inline Score score(const NonconformityFunction& fn, const Features& ex, LabelId y) {
  return fn.score(ex, y);
}

}  // namespace icpmon
