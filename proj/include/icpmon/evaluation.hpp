#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "icpmon/icp.hpp"
#include "icpmon/types.hpp"

namespace icpmon {

/// Rates over a fixed test set at one significance level. error_rate is
/// the miscoverage fraction (true label outside the set) — the quantity
/// the validity guarantee bounds. single/multiple/empty partition the
/// same examples by set size and sum to 1.
struct EpsilonRow {
  double epsilon = 0.0;
  double error_rate = 0.0;
  double multiple_rate = 0.0;
  double empty_rate = 0.0;
  double single_rate = 0.0;
};

/// Errors accumulated in test input order at one significance level;
/// cumulative_errors[i] counts errors among inputs 0..i.
struct CumulativeCurve {
  double epsilon = 0.0;
  std::vector<std::uint32_t> cumulative_errors;
};

struct LatencyStats {
  std::size_t samples = 0;
  double mean_seconds = 0.0;
  double p50_seconds = 0.0;
  double p99_seconds = 0.0;
  std::uint64_t artifact_bytes = 0;  // filled by callers that hold the file
};

struct EvaluationReport {
  std::vector<EpsilonRow> rows;
  std::vector<CumulativeCurve> curves;
  std::optional<LatencyStats> latency;
  std::map<std::string, std::string> config;
};

namespace detail {

inline bool includes_label(double p, double eps, InclusionRule rule) {
  return rule == InclusionRule::Strict ? p > eps : p >= eps;
}

// All p-values of every test example, computed once and reused across
// the whole significance grid.
inline std::vector<std::vector<double>> test_p_values(const CalibratedMonitor& m,
                                                      const Dataset& test) {
  if (test.empty()) throw DataError("empty test set");
  std::vector<std::vector<double>> p;
  p.reserve(test.size());
  for (const auto& ex : test.examples) {
    if (ex.label < 0 || ex.label >= test.universe.num_classes)
      throw DataError("example " + ex.id() + " label outside the universe");
    p.push_back(m.p_values_for(ex.features));
  }
  return p;
}

}  // namespace detail

/// Per-ε rates plus cumulative error curves in test input order.
inline EvaluationReport evaluate(const CalibratedMonitor& m, const Dataset& test,
                                 const std::vector<SignificanceLevel>& eps_list,
                                 InclusionRule rule = InclusionRule::Strict) {
  if (eps_list.empty()) throw ConfigError("no significance levels to evaluate");
  const auto p = detail::test_p_values(m, test);
  const double n = static_cast<double>(p.size());

  EvaluationReport report;
  report.rows.reserve(eps_list.size());
  report.curves.reserve(eps_list.size());
  for (const SignificanceLevel& eps : eps_list) {
    EpsilonRow row;
    row.epsilon = eps.value();
    CumulativeCurve curve;
    curve.epsilon = eps.value();
    curve.cumulative_errors.reserve(p.size());
    std::uint32_t errors = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const auto& pv = p[i];
      std::size_t set_size = 0;
      for (double pj : pv)
        if (detail::includes_label(pj, eps.value(), rule)) ++set_size;
      const bool covered = detail::includes_label(
          pv[static_cast<std::size_t>(test.examples[i].label)], eps.value(), rule);
      if (!covered) {
        row.error_rate += 1.0;
        ++errors;
      }
      if (set_size == 0) row.empty_rate += 1.0;
      else if (set_size == 1) row.single_rate += 1.0;
      else row.multiple_rate += 1.0;
      curve.cumulative_errors.push_back(errors);
    }
    row.error_rate /= n;
    row.empty_rate /= n;
    row.single_rate /= n;
    row.multiple_rate /= n;
    report.rows.push_back(row);
    report.curves.push_back(std::move(curve));
  }
  return report;
}

/// Rates over an inclusive ε grid — the calibration/performance curve.
/// Defaults sweep [0.001, 0.1] at step 0.001.
inline std::vector<EpsilonRow> calibration_curve(const CalibratedMonitor& m,
                                                 const Dataset& test,
                                                 double from = 0.001,
                                                 double to = 0.1,
                                                 double step = 0.001,
                                                 InclusionRule rule = InclusionRule::Strict) {
  if (!(step > 0.0)) throw ConfigError("grid step must be positive");
  if (!(from > 0.0) || !(to < 1.0) || from > to)
    throw ConfigError("significance grid must satisfy 0 < from <= to < 1");
  const auto p = detail::test_p_values(m, test);
  const double n = static_cast<double>(p.size());

  std::vector<EpsilonRow> rows;
  const auto points = static_cast<std::size_t>((to - from) / step + 0.5) + 1;
  rows.reserve(points);
  for (std::size_t g = 0; g < points; ++g) {
    const double eps = from + static_cast<double>(g) * step;
    EpsilonRow row;
    row.epsilon = eps;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const auto& pv = p[i];
      std::size_t set_size = 0;
      for (double pj : pv)
        if (detail::includes_label(pj, eps, rule)) ++set_size;
      if (!detail::includes_label(
              pv[static_cast<std::size_t>(test.examples[i].label)], eps, rule))
        row.error_rate += 1.0;
      if (set_size == 0) row.empty_rate += 1.0;
      else if (set_size == 1) row.single_rate += 1.0;
      else row.multiple_rate += 1.0;
    }
    row.error_rate /= n;
    row.empty_rate /= n;
    row.single_rate /= n;
    row.multiple_rate /= n;
    rows.push_back(row);
  }
  return rows;
}

/// Wall-clock predict_set cost per input, single-threaded, after one
/// unmeasured warmup pass over the whole test set.
inline LatencyStats benchmark_latency(const CalibratedMonitor& m, const Dataset& test,
                                      std::size_t repetitions,
                                      SignificanceLevel eps = SignificanceLevel(0.05),
                                      InclusionRule rule = InclusionRule::Strict) {
  if (repetitions == 0) throw ConfigError("repetitions must be at least 1");
  if (test.empty()) throw DataError("empty test set");

  for (const auto& ex : test.examples) (void)m.predict_set(ex.features, eps, rule);

  std::vector<double> seconds;
  seconds.reserve(repetitions * test.size());
  for (std::size_t rep = 0; rep < repetitions; ++rep) {
    for (const auto& ex : test.examples) {
      const auto start = std::chrono::steady_clock::now();
      (void)m.predict_set(ex.features, eps, rule);
      const auto stop = std::chrono::steady_clock::now();
      seconds.push_back(std::chrono::duration<double>(stop - start).count());
    }
  }

  std::sort(seconds.begin(), seconds.end());
  const auto quantile = [&](double q) {
    const auto rank = static_cast<std::size_t>(
        std::ceil(q * static_cast<double>(seconds.size())));
    return seconds[std::min(seconds.size() - 1, rank == 0 ? 0 : rank - 1)];
  };

  LatencyStats stats;
  stats.samples = seconds.size();
  double total = 0.0;
  for (double s : seconds) total += s;
  stats.mean_seconds = total / static_cast<double>(seconds.size());
  stats.p50_seconds = quantile(0.50);
  stats.p99_seconds = quantile(0.99);
  return stats;
}

}  // namespace icpmon
