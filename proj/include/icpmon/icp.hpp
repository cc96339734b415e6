#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "icpmon/nonconformity.hpp"
#include "icpmon/types.hpp"

namespace icpmon {

/// Three-way outcome of one monitored input: an empty prediction set, a
/// single confident label, or an ambiguous set that the caller should
/// reject and escalate. Empty and Reject are distinct on purpose — they
/// call for different downstream action.
enum class Verdict : std::uint8_t { Empty = 0, Single = 1, Reject = 2 };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::Empty: return "empty";
    case Verdict::Single: return "single";
    case Verdict::Reject: return "reject";
  }
  return "?";
}

/// Whether a label enters the prediction set on p > eps (strict, the
/// default) or p >= eps (weak).
enum class InclusionRule : std::uint8_t { Strict = 0, Weak = 1 };

inline const char* to_string(InclusionRule r) {
  return r == InclusionRule::Strict ? "strict" : "weak";
}

inline InclusionRule inclusion_rule_from_string(const std::string& name) {
  if (name == "strict") return InclusionRule::Strict;
  if (name == "weak") return InclusionRule::Weak;
  throw ConfigError("unknown inclusion rule '" + name + "'");
}

struct PredictionResult {
  std::vector<double> p_values;    // indexed by label id
  std::vector<LabelId> label_set;  // ascending
  Verdict verdict = Verdict::Empty;
  double epsilon = 0.0;
};

/// One entry of a monitored stream: either a prediction or the error that
/// it raised. `seconds` is the wall-clock cost of this single input.
struct MonitorOutput {
  std::string id;
  std::optional<PredictionResult> result;
  std::string error;
  double seconds = 0.0;

  bool ok() const { return result.has_value(); }
};

/// A frozen scoring rule plus the sorted calibration score multiset.
/// Immutable; concurrent predict_set calls are safe.
class CalibratedMonitor {
 public:
  CalibratedMonitor(NonconformityFunction fn, std::vector<Score> calib_scores,
                    LabelUniverse universe)
      : fn_(std::move(fn)),
        scores_(std::move(calib_scores)),
        universe_(std::move(universe)) {
    if (scores_.empty()) throw DataError("no calibration scores");
    if (universe_.num_classes < 2)
      throw ConfigError("monitor needs at least 2 classes");
    for (Score s : scores_)
      if (std::isnan(s)) throw DataError("NaN calibration score");
    std::sort(scores_.begin(), scores_.end());
  }

  const NonconformityFunction& fn() const { return fn_; }
  const std::vector<Score>& calibration_scores() const { return scores_; }
  const LabelUniverse& universe() const { return universe_; }
  std::size_t calibration_size() const { return scores_.size(); }

  /// Fraction of calibration scores >= s. +inf counts +inf calibration
  /// scores, so the grid {0, 1/m, ..., 1} is exhaustive.
  double p_value(Score s) const {
    if (std::isnan(s)) throw DataError("NaN nonconformity score");
    const auto first_ge = std::lower_bound(scores_.begin(), scores_.end(), s);
    const auto count = static_cast<double>(scores_.end() - first_ge);
    return count / static_cast<double>(scores_.size());
  }

  /// p-value of every label in the universe for one input.
  std::vector<double> p_values_for(const Features& ex) const {
    const auto scores = fn_.score_all(ex, universe_.num_classes);
    std::vector<double> p(scores.size());
    for (std::size_t j = 0; j < scores.size(); ++j) p[j] = p_value(scores[j]);
    return p;
  }

  PredictionResult predict_set(const Features& ex, SignificanceLevel eps,
                               InclusionRule rule = InclusionRule::Strict) const {
    PredictionResult out;
    out.p_values = p_values_for(ex);
    out.epsilon = eps.value();
    for (std::size_t j = 0; j < out.p_values.size(); ++j) {
      const bool in = rule == InclusionRule::Strict
                          ? out.p_values[j] > eps.value()
                          : out.p_values[j] >= eps.value();
      if (in) out.label_set.push_back(static_cast<LabelId>(j));
    }
    out.verdict = out.label_set.empty()    ? Verdict::Empty
                  : out.label_set.size() == 1 ? Verdict::Single
                                              : Verdict::Reject;
    return out;
  }

  /// Element-wise predict_set over a stream, preserving order. A failing
  /// input yields an error entry instead of aborting the stream.
  std::vector<MonitorOutput> monitor(std::span<const Features> stream,
                                     SignificanceLevel eps,
                                     InclusionRule rule = InclusionRule::Strict) const {
    std::vector<MonitorOutput> outputs;
    outputs.reserve(stream.size());
    for (const Features& ex : stream) {
      MonitorOutput entry;
      entry.id = ex.id;
      const auto start = std::chrono::steady_clock::now();
      try {
        entry.result = predict_set(ex, eps, rule);
      } catch (const Error& e) {
        entry.error = e.what();
      }
      entry.seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
              .count();
      outputs.push_back(std::move(entry));
    }
    return outputs;
  }

 private:
  NonconformityFunction fn_;
  std::vector<Score> scores_;
  LabelUniverse universe_;
};

/// Scores every calibration example at its ground-truth label and freezes
/// the sorted score set. The function's own state (index, centroids,
/// temperature) must come from data disjoint from `calib`.
inline CalibratedMonitor calibrate(NonconformityFunction fn, const Dataset& calib) {
  if (calib.empty()) throw DataError("empty calibration set");
  std::vector<Score> scores;
  scores.reserve(calib.size());
  for (const auto& ex : calib.examples) {
    if (ex.label < 0 || ex.label >= calib.universe.num_classes)
      throw DataError("example " + ex.id() + " label outside the universe");
    scores.push_back(fn.score(ex.features, ex.label));
  }
  return CalibratedMonitor(std::move(fn), std::move(scores), calib.universe);
}

/// Smallest significance level that removes every multi-label prediction
/// on the validation set: the largest second-largest p-value observed.
/// Degenerate all-zero case floors at the grid step 1/m. Under the weak
/// inclusion rule the same elimination needs one grid step more.
inline SignificanceLevel estimate_epsilon(const CalibratedMonitor& m,
                                          const Dataset& validation,
                                          InclusionRule rule = InclusionRule::Strict) {
  if (validation.empty()) throw DataError("empty validation set");
  if (validation.universe.num_classes != m.universe().num_classes)
    throw ConfigError("validation universe does not match the monitor");

  double eps_star = 0.0;
  for (const auto& ex : validation.examples) {
    auto p = m.p_values_for(ex.features);
    // second-largest p-value of this example
    std::nth_element(p.begin(), p.begin() + 1, p.end(), std::greater<double>());
    eps_star = std::max(eps_star, p[1]);
  }

  const double step = 1.0 / static_cast<double>(m.calibration_size());
  if (eps_star == 0.0) eps_star = step;
  if (rule == InclusionRule::Weak) eps_star += step;
  if (eps_star >= 1.0)
    throw DataError(
        "estimated significance level reaches 1; calibration cannot separate "
        "the validation set");
  return SignificanceLevel(eps_star);
}

}  // namespace icpmon
