#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace icpmon {

/// Dense class index in [0, num_classes).
using LabelId = std::int32_t;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Bad parameter values (ranges, unusable configurations).
struct ConfigError : Error {
  using Error::Error;
};

/// Data that violates a contract (empty sets, missing classes, bad values).
struct DataError : Error {
  using Error::Error;
};

/// File-level failures (missing, malformed, truncated).
struct IoError : Error {
  using Error::Error;
};

/// A scoring rule asked for a feature kind the example does not carry.
struct FeatureMissingError : Error {
  using Error::Error;
};

/// A candidate class has no representative in the training data.
struct CalibrationDomainError : Error {
  using Error::Error;
};

struct DimensionMismatchError : Error {
  using Error::Error;
};

/// The set of classes. Names are display metadata; identity is the index.
struct LabelUniverse {
  std::int32_t num_classes = 0;
  std::vector<std::string> names;  // empty, or one per class

  bool has_names() const { return !names.empty(); }

  std::string name_of(LabelId label) const {
    if (label >= 0 && static_cast<std::size_t>(label) < names.size())
      return names[static_cast<std::size_t>(label)];
    return std::to_string(label);
  }

  /// Resolves a label token (name, or decimal index when unnamed) to its index.
  /// Returns -1 when unknown.
  LabelId index_of(const std::string& token) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == token) return static_cast<LabelId>(i);
    if (names.empty()) {
      try {
        std::size_t pos = 0;
        long v = std::stol(token, &pos);
        if (pos == token.size() && v >= 0 && v < num_classes)
          return static_cast<LabelId>(v);
      } catch (const std::exception&) {
      }
    }
    return -1;
  }
};

/// Input-side payload of one example. Empty vector means the kind is absent.
/// `embedding` holds penultimate-layer activations, or the raw feature vector
/// for tabular data that has not been encoded yet.
struct Features {
  std::string id;
  std::vector<double> embedding;
  std::vector<double> probs;
  std::vector<double> logits;

  bool has_embedding() const { return !embedding.empty(); }
  bool has_probs() const { return !probs.empty(); }
  bool has_logits() const { return !logits.empty(); }
};

struct LabeledExample {
  Features features;
  LabelId label = 0;

  const std::string& id() const { return features.id; }
};

enum class DatasetRole { ProperTraining, Calibration, Validation, Test };

inline const char* to_string(DatasetRole role) {
  switch (role) {
    case DatasetRole::ProperTraining: return "proper-training";
    case DatasetRole::Calibration: return "calibration";
    case DatasetRole::Validation: return "validation";
    case DatasetRole::Test: return "test";
  }
  return "?";
}

struct Dataset {
  std::vector<LabeledExample> examples;
  LabelUniverse universe;
  std::int32_t embedding_dim = 0;  // 0 when no example carries an embedding
  DatasetRole role = DatasetRole::Test;

  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }
};

/// Error-rate bound epsilon, constrained to the open interval (0, 1).
class SignificanceLevel {
 public:
  explicit SignificanceLevel(double epsilon) : epsilon_(epsilon) {
    if (!(epsilon > 0.0) || !(epsilon < 1.0))
      throw ConfigError("significance level must lie in (0, 1), got " +
                        std::to_string(epsilon));
  }

  double value() const { return epsilon_; }

 private:
  double epsilon_;
};

/// One broken invariant; violations are data, not failures.
struct Violation {
  std::string example_id;  // "-" for dataset-level rules
  std::string rule;

  bool operator==(const Violation& o) const {
    return example_id == o.example_id && rule == o.rule;
  }
};

namespace detail {

inline bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace detail

/// Checks every type invariant and returns the list of broken ones.
/// Pure: identical datasets yield identical violation lists.
inline std::vector<Violation> validate_dataset(const Dataset& ds) {
  std::vector<Violation> out;
  const auto dataset_rule = [&out](const std::string& rule) {
    out.push_back({"-", rule});
  };

  if (ds.examples.empty()) dataset_rule("empty dataset");
  const std::int32_t C = ds.universe.num_classes;
  if (C < 2) dataset_rule("label universe must have at least 2 classes");
  if (ds.universe.has_names() &&
      ds.universe.names.size() != static_cast<std::size_t>(C))
    dataset_rule("label name table size does not match class count");

  bool first = true;
  bool want_emb = false, want_probs = false, want_logits = false;
  for (const auto& ex : ds.examples) {
    const auto violation = [&out, &ex](const std::string& rule) {
      out.push_back({ex.id(), rule});
    };
    const Features& f = ex.features;

    if (ex.label < 0 || ex.label >= C) violation("label index out of range");
    if (!f.has_embedding() && !f.has_probs() && !f.has_logits())
      violation("no feature vector present");

    if (first) {
      want_emb = f.has_embedding();
      want_probs = f.has_probs();
      want_logits = f.has_logits();
      first = false;
    } else if (f.has_embedding() != want_emb || f.has_probs() != want_probs ||
               f.has_logits() != want_logits) {
      violation("feature presence pattern differs from the rest of the dataset");
    }

    if (f.has_embedding()) {
      if (static_cast<std::int32_t>(f.embedding.size()) != ds.embedding_dim)
        violation("embedding length differs from dataset dimension");
      if (!detail::all_finite(f.embedding))
        violation("embedding contains a non-finite value");
    }
    if (f.has_probs()) {
      if (static_cast<std::int32_t>(f.probs.size()) != C)
        violation("probability vector length differs from class count");
      double sum = 0.0;
      bool in_range = true;
      for (double p : f.probs) {
        if (!std::isfinite(p) || p < 0.0 || p > 1.0) in_range = false;
        sum += p;
      }
      if (!in_range) violation("probability outside [0, 1]");
      if (std::fabs(sum - 1.0) > 1e-6)
        violation("probabilities do not sum to 1 within 1e-6");
    }
    if (f.has_logits()) {
      if (static_cast<std::int32_t>(f.logits.size()) != C)
        violation("logit vector length differs from class count");
      if (!detail::all_finite(f.logits))
        violation("logit contains a non-finite value");
    }
  }
  return out;
}

}  // namespace icpmon
