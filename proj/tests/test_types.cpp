#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "icpmon/types.hpp"

using namespace icpmon;

namespace {

Dataset small_valid_dataset() {
  Dataset ds;
  ds.universe.num_classes = 2;
  ds.embedding_dim = 2;
  for (int i = 0; i < 4; ++i) {
    LabeledExample ex;
    ex.features.id = "e" + std::to_string(i);
    ex.features.embedding = {static_cast<double>(i), 1.0 - i};
    ex.label = i % 2;
    ds.examples.push_back(ex);
  }
  return ds;
}

bool has_rule(const std::vector<Violation>& vs, const std::string& needle) {
  for (const auto& v : vs)
    if (v.rule.find(needle) != std::string::npos) return true;
  return false;
}

}  // namespace

TEST_CASE("significance level accepts the open unit interval only") {
  CHECK(SignificanceLevel(0.05).value() == 0.05);
  CHECK(SignificanceLevel(0.999).value() == 0.999);
  CHECK_THROWS_AS(SignificanceLevel(0.0), ConfigError);
  CHECK_THROWS_AS(SignificanceLevel(1.0), ConfigError);
  CHECK_THROWS_AS(SignificanceLevel(-0.1), ConfigError);
}

TEST_CASE("label universe resolves names and bare indices") {
  LabelUniverse named{3, {"fwd", "left", "right"}};
  CHECK(named.index_of("left") == 1);
  CHECK(named.index_of("back") == -1);
  CHECK(named.name_of(2) == "right");

  LabelUniverse bare{4, {}};
  CHECK(bare.index_of("2") == 2);
  CHECK(bare.index_of("7") == -1);   // outside the universe
  CHECK(bare.index_of("x") == -1);
  CHECK(bare.name_of(3) == "3");
}

TEST_CASE("a well-formed dataset validates cleanly") {
  CHECK(validate_dataset(small_valid_dataset()).empty());
}

TEST_CASE("validation flags dataset-level problems") {
  Dataset empty;
  empty.universe.num_classes = 2;
  CHECK(has_rule(validate_dataset(empty), "empty dataset"));

  auto one_class = small_valid_dataset();
  one_class.universe.num_classes = 1;
  CHECK(has_rule(validate_dataset(one_class), "at least 2 classes"));
}

TEST_CASE("validation flags per-example problems") {
  auto out_of_range = small_valid_dataset();
  out_of_range.examples[1].label = 9;
  CHECK(has_rule(validate_dataset(out_of_range), "label"));

  auto no_features = small_valid_dataset();
  no_features.examples[2].features.embedding.clear();
  const auto vs = validate_dataset(no_features);
  CHECK(has_rule(vs, "no feature vector"));
  CHECK(vs.front().example_id == "e2");

  auto ragged = small_valid_dataset();
  ragged.examples[0].features.embedding.push_back(1.0);
  CHECK(has_rule(validate_dataset(ragged), "embedding length"));

  auto non_finite = small_valid_dataset();
  non_finite.examples[3].features.embedding[0] =
      std::numeric_limits<double>::quiet_NaN();
  CHECK(has_rule(validate_dataset(non_finite), "non-finite"));
}

TEST_CASE("validation enforces one feature pattern across the dataset") {
  auto mixed = small_valid_dataset();
  mixed.examples[1].features.probs = {0.5, 0.5};
  CHECK(has_rule(validate_dataset(mixed), "presence pattern"));
}

TEST_CASE("probability vectors must be stochastic within 1e-6") {
  Dataset ds;
  ds.universe.num_classes = 2;
  for (int i = 0; i < 2; ++i) {
    LabeledExample ex;
    ex.features.id = "p" + std::to_string(i);
    ex.features.probs = {0.25, 0.75};
    ex.label = i;
    ds.examples.push_back(ex);
  }
  CHECK(validate_dataset(ds).empty());

  ds.examples[0].features.probs = {0.25, 0.75 + 5e-7};  // inside tolerance
  CHECK(validate_dataset(ds).empty());

  ds.examples[0].features.probs = {0.3, 0.75};
  CHECK(has_rule(validate_dataset(ds), "sum"));

  ds.examples[0].features.probs = {-0.1, 1.1};
  CHECK(!validate_dataset(ds).empty());
}

TEST_CASE("logit vectors must match the class count and be finite") {
  Dataset ds;
  ds.universe.num_classes = 3;
  for (int i = 0; i < 2; ++i) {
    LabeledExample ex;
    ex.features.id = "z" + std::to_string(i);
    ex.features.logits = {0.0, 1.0, -1.0};
    ex.label = i;
    ds.examples.push_back(ex);
  }
  CHECK(validate_dataset(ds).empty());

  ds.examples[1].features.logits = {0.0, 1.0};
  CHECK(has_rule(validate_dataset(ds), "logit vector length"));

  ds.examples[1].features.logits = {0.0, 1.0,
                                    std::numeric_limits<double>::infinity()};
  CHECK(has_rule(validate_dataset(ds), "logit"));
}

TEST_CASE("dataset roles render for diagnostics") {
  CHECK(std::string(to_string(DatasetRole::ProperTraining)) == "proper-training");
  CHECK(std::string(to_string(DatasetRole::Calibration)) == "calibration");
  CHECK(std::string(to_string(DatasetRole::Validation)) == "validation");
  CHECK(std::string(to_string(DatasetRole::Test)) == "test");
}
