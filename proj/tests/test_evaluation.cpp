#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "icpmon/evaluation.hpp"
#include "support/synthetic.hpp"

using namespace icpmon;

namespace {

CalibratedMonitor grid_monitor(std::size_t m, std::int32_t classes) {
  std::vector<Score> scores(m);
  for (std::size_t k = 0; k < m; ++k)
    scores[k] = static_cast<double>(k) / static_cast<double>(m);
  LabelUniverse u;
  u.num_classes = classes;
  return CalibratedMonitor(NonconformityFunction::hinge(), std::move(scores),
                           std::move(u));
}

Dataset tiny_accounting_fixture() {
  Dataset test;
  test.universe.num_classes = 3;
  test.role = DatasetRole::Test;
  const auto add = [&](std::vector<double> probs, LabelId y) {
    LabeledExample ex;
    ex.features.id = "t" + std::to_string(test.size());
    ex.features.probs = std::move(probs);
    ex.label = y;
    test.examples.push_back(std::move(ex));
  };
  // Against calibration scores {k/32}, at eps = 0.1:
  add({0.75, 0.125, 0.0625}, 0);     // set {0,1}: multiple, covered
  add({0.75, 0.125, 0.0625}, 2);     // set {0,1}: multiple, error
  add({0.5, 0.0, 0.0}, 1);           // set {0}: single, error
  add({0.0625, 0.03125, 0.0}, 0);    // set {}: empty, error
  return test;
}

std::vector<SignificanceLevel> levels(std::initializer_list<double> xs) {
  std::vector<SignificanceLevel> out;
  for (double x : xs) out.emplace_back(x);
  return out;
}

}  // namespace

TEST_CASE("rates match a hand-counted fixture") {
  const auto m = grid_monitor(32, 3);
  const auto test = tiny_accounting_fixture();
  const auto report = evaluate(m, test, levels({0.1}));

  REQUIRE(report.rows.size() == 1);
  const auto& row = report.rows[0];
  CHECK(row.epsilon == 0.1);
  CHECK(row.error_rate == 0.75);
  CHECK(row.multiple_rate == 0.5);
  CHECK(row.single_rate == 0.25);
  CHECK(row.empty_rate == 0.25);

  REQUIRE(report.curves.size() == 1);
  CHECK(report.curves[0].cumulative_errors ==
        std::vector<std::uint32_t>{0, 1, 2, 3});
  CHECK(report.curves[0].epsilon == 0.1);
  CHECK_FALSE(report.latency.has_value());
}

TEST_CASE("set-size rates partition the test set at every level") {
  const auto calib = testsupport::make_prob_dataset(500, 4, 0.6, 61,
                                                    DatasetRole::Calibration);
  const auto m = calibrate(NonconformityFunction::hinge(), calib);
  const auto test = testsupport::make_prob_dataset(700, 4, 0.6, 62,
                                                   DatasetRole::Test, "t");

  const auto report =
      evaluate(m, test, levels({0.01, 0.05, 0.1, 0.3, 0.7}), InclusionRule::Strict);
  for (const auto& row : report.rows) {
    CHECK(std::abs(row.single_rate + row.multiple_rate + row.empty_rate - 1.0) <=
          1e-12);
    CHECK(row.error_rate >= row.empty_rate);  // an empty set is always an error
    CHECK(row.error_rate <= 1.0);
  }

  // The final cumulative count reproduces the error rate exactly.
  const double n = static_cast<double>(test.size());
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    REQUIRE(report.curves[i].cumulative_errors.size() == test.size());
    CHECK(static_cast<double>(report.curves[i].cumulative_errors.back()) / n ==
          report.rows[i].error_rate);
    CHECK(std::is_sorted(report.curves[i].cumulative_errors.begin(),
                         report.curves[i].cumulative_errors.end()));
  }
}

TEST_CASE("a level near one rejects essentially everything") {
  const auto calib = testsupport::make_prob_dataset(400, 3, 0.8, 71,
                                                    DatasetRole::Calibration);
  const auto m = calibrate(NonconformityFunction::hinge(), calib);
  const auto test = testsupport::make_prob_dataset(300, 3, 0.8, 72,
                                                   DatasetRole::Test, "t");
  const auto report = evaluate(m, test, levels({0.999}));
  CHECK(report.rows[0].error_rate >= 0.9);
  CHECK(report.rows[0].empty_rate >= 0.9);
}

TEST_CASE("test order changes curves but never rates") {
  const auto calib = testsupport::make_prob_dataset(300, 4, 0.5, 81,
                                                    DatasetRole::Calibration);
  const auto m = calibrate(NonconformityFunction::hinge(), calib);
  auto test = testsupport::make_prob_dataset(250, 4, 0.5, 82,
                                             DatasetRole::Test, "t");

  const auto before = evaluate(m, test, levels({0.02, 0.08}));
  std::mt19937_64 rng(5);
  std::shuffle(test.examples.begin(), test.examples.end(), rng);
  const auto after = evaluate(m, test, levels({0.02, 0.08}));

  for (std::size_t i = 0; i < before.rows.size(); ++i) {
    CHECK(before.rows[i].error_rate == after.rows[i].error_rate);
    CHECK(before.rows[i].single_rate == after.rows[i].single_rate);
    CHECK(before.rows[i].multiple_rate == after.rows[i].multiple_rate);
    CHECK(before.rows[i].empty_rate == after.rows[i].empty_rate);
  }
}

TEST_CASE("rates move monotonically along the significance grid") {
  const auto calib = testsupport::make_prob_dataset(600, 4, 0.5, 91,
                                                    DatasetRole::Calibration);
  const auto m = calibrate(NonconformityFunction::hinge(), calib);
  const auto test = testsupport::make_prob_dataset(400, 4, 0.5, 92,
                                                   DatasetRole::Test, "t");

  const auto rows = calibration_curve(m, test);
  CHECK(rows.size() == 100);
  CHECK(rows.front().epsilon == doctest::Approx(0.001));
  CHECK(rows.back().epsilon == doctest::Approx(0.1));
  for (std::size_t i = 1; i < rows.size(); ++i) {
    CHECK(rows[i].epsilon > rows[i - 1].epsilon);
    CHECK(rows[i].error_rate >= rows[i - 1].error_rate);
    CHECK(rows[i].multiple_rate <= rows[i - 1].multiple_rate);
    CHECK(rows[i].empty_rate >= rows[i - 1].empty_rate);
  }
}

TEST_CASE("a single-point grid equals the direct evaluation") {
  const auto m = grid_monitor(32, 3);
  const auto test = tiny_accounting_fixture();
  const auto rows = calibration_curve(m, test, 0.1, 0.1, 0.001);
  REQUIRE(rows.size() == 1);
  const auto report = evaluate(m, test, levels({0.1}));
  CHECK(rows[0].error_rate == report.rows[0].error_rate);
  CHECK(rows[0].single_rate == report.rows[0].single_rate);
  CHECK(rows[0].multiple_rate == report.rows[0].multiple_rate);
  CHECK(rows[0].empty_rate == report.rows[0].empty_rate);
}

TEST_CASE("latency benchmarking yields one sample per repetition and input") {
  const auto m = grid_monitor(64, 3);
  const auto test = testsupport::make_prob_dataset(20, 3, 1.0, 11,
                                                   DatasetRole::Test, "t");
  const auto stats = benchmark_latency(m, test, 3);
  CHECK(stats.samples == 60);
  CHECK(stats.mean_seconds >= 0.0);
  CHECK(stats.p50_seconds <= stats.p99_seconds);
  CHECK(stats.artifact_bytes == 0);
}

TEST_CASE("evaluation inputs are validated") {
  const auto m = grid_monitor(32, 3);
  const auto test = tiny_accounting_fixture();

  CHECK_THROWS_AS(evaluate(m, test, {}), ConfigError);
  Dataset empty;
  empty.universe.num_classes = 3;
  CHECK_THROWS_AS(evaluate(m, empty, levels({0.05})), DataError);
  CHECK_THROWS_AS(benchmark_latency(m, test, 0), ConfigError);
  CHECK_THROWS_AS(benchmark_latency(m, empty, 1), DataError);
  CHECK_THROWS_AS(calibration_curve(m, test, 0.1, 0.05, 0.01), ConfigError);
  CHECK_THROWS_AS(calibration_curve(m, test, 0.01, 0.05, 0.0), ConfigError);

  auto bad_label = test;
  bad_label.examples[1].label = 9;
  CHECK_THROWS_AS(evaluate(m, bad_label, levels({0.05})), DataError);
}
