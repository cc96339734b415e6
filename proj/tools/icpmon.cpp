// icpmon — conformal assurance monitoring pipeline driver.
//
// Subcommands: train-ref, extract, calibrate, estimate-epsilon, predict,
// monitor, evaluate, bench. Exit codes: 0 success, 1 data error, 2 usage.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "icpmon/icpmon.hpp"

namespace {

using nlohmann::json;

struct SplitFlags {
  icpmon::SplitConfig cfg;

  void attach(CLI::App* cmd) {
    cmd->add_option("--split-seed", cfg.seed, "Seed for the stratified split")
        ->capture_default_str();
    cmd->add_option("--test-fraction", cfg.test_fraction,
                    "Share of each class reserved for testing")
        ->capture_default_str();
    cmd->add_option("--train-fraction", cfg.train_fraction_of_rest,
                    "Share of the non-test remainder used for training")
        ->capture_default_str();
    cmd->add_option("--calib-share", cfg.calib_share_of_holdout,
                    "Share of the holdout used for calibration (rest is validation)")
        ->capture_default_str();
  }
};

double parse_positive_double(const std::string& s, const char* what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos == s.size() && v > 0.0) return v;
  } catch (const std::exception&) {
  }
  throw icpmon::ConfigError(std::string(what) + " must be a positive number, got '" +
                            s + "'");
}

icpmon::SignificanceLevel resolve_epsilon(const std::string& epsilon_flag,
                                          const icpmon::CalibratedMonitor& m,
                                          const std::string& validation_path,
                                          icpmon::InclusionRule rule) {
  if (epsilon_flag == "auto") {
    if (validation_path.empty())
      throw icpmon::ConfigError("--epsilon auto requires --validation");
    const auto validation = icpmon::load_feature_file(
        validation_path, icpmon::DatasetRole::Validation, &m.universe());
    return icpmon::estimate_epsilon(m, validation, rule);
  }
  return icpmon::SignificanceLevel(
      parse_positive_double(epsilon_flag, "--epsilon"));
}

std::string join_labels(const icpmon::LabelUniverse& universe,
                        const std::vector<icpmon::LabelId>& labels) {
  std::string out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (i) out += '|';
    out += universe.name_of(labels[i]);
  }
  return out;
}

// Feature slot a bare stream row should land in for this scoring rule.
icpmon::FeatureKind default_stream_kind(const icpmon::NonconformityFunction& fn) {
  if (icpmon::uses_embeddings(fn.kind())) return icpmon::FeatureKind::Embeddings;
  if (icpmon::uses_temperature(fn.kind())) return icpmon::FeatureKind::Logits;
  return icpmon::FeatureKind::Probs;
}

icpmon::Features run_reference_model(const icpmon::MlpModel& model,
                                     const icpmon::Features& raw) {
  icpmon::ForwardResult f = icpmon::forward(model, raw.embedding);
  icpmon::Features out;
  out.id = raw.id;
  out.embedding = std::move(f.embedding);
  out.logits = std::move(f.logits);
  out.probs = std::move(f.probs);
  return out;
}

// ---------------------------------------------------------------------------

struct TrainRefOpts {
  std::string data, out;
  icpmon::TrainConfig train;
  SplitFlags split;
};

void run_train_ref(const TrainRefOpts& o) {
  const auto ds =
      icpmon::load_feature_file(o.data, icpmon::DatasetRole::ProperTraining);
  const auto splits = icpmon::split(ds, o.split.cfg);
  const auto model = icpmon::train(splits.train, o.train);
  icpmon::save_model(model, o.out);

  std::size_t correct = 0;
  for (const auto& ex : splits.test.examples) {
    const auto f = icpmon::forward(model, ex.features.embedding);
    const auto best = static_cast<icpmon::LabelId>(
        std::max_element(f.probs.begin(), f.probs.end()) - f.probs.begin());
    if (best == ex.label) ++correct;
  }

  json j;
  j["command"] = "train-ref";
  j["hidden"] = model.hidden;
  j["train_size"] = splits.train.size();
  j["test_size"] = splits.test.size();
  j["test_accuracy"] =
      static_cast<double>(correct) / static_cast<double>(splits.test.size());
  j["model"] = o.out;
  std::cout << j.dump() << '\n';
}

struct ExtractOpts {
  std::string model, data, out_dir;
  std::string kinds = "e,z,p";
  SplitFlags split;
};

void run_extract(const ExtractOpts& o) {
  std::vector<icpmon::FeatureKind> kinds;
  for (const auto& cell : icpmon::detail::split_cells(o.kinds)) {
    if (cell == "e") kinds.push_back(icpmon::FeatureKind::Embeddings);
    else if (cell == "z") kinds.push_back(icpmon::FeatureKind::Logits);
    else if (cell == "p") kinds.push_back(icpmon::FeatureKind::Probs);
    else throw icpmon::ConfigError("--kinds accepts a comma list of e, z, p");
  }
  if (kinds.empty()) throw icpmon::ConfigError("--kinds must not be empty");

  const auto model = icpmon::load_model(o.model);
  const auto ds =
      icpmon::load_feature_file(o.data, icpmon::DatasetRole::ProperTraining);
  const auto splits = icpmon::split(ds, o.split.cfg);

  std::filesystem::create_directories(o.out_dir);
  const std::pair<const char*, const icpmon::Dataset*> roles[] = {
      {"train", &splits.train},
      {"calib", &splits.calibration},
      {"validation", &splits.validation},
      {"test", &splits.test},
  };
  for (const auto& [name, part] : roles) {
    const auto exported = icpmon::export_features(model, *part);
    for (const auto kind : kinds) {
      const auto path = (std::filesystem::path(o.out_dir) /
                         (std::string(name) + "." + icpmon::column_prefix(kind) +
                          ".csv"))
                            .string();
      icpmon::save_feature_file(exported, path, kind);
      std::cout << path << '\n';
    }
  }
}

struct CalibrateOpts {
  std::string fn, train, calib, validation, out;
  int k = icpmon::NonconformityFunction::kDefaultK;
  double temperature = 0.0;  // 0 = fit on --validation
};

void run_calibrate(const CalibrateOpts& o) {
  const auto kind = icpmon::nc_kind_from_string(o.fn);

  std::optional<icpmon::Dataset> train;
  if (!o.train.empty())
    train = icpmon::load_feature_file(o.train, icpmon::DatasetRole::ProperTraining);
  if (icpmon::uses_embeddings(kind) && !train)
    throw icpmon::ConfigError("--fn " + o.fn + " requires --train");

  const icpmon::LabelUniverse* expected = train ? &train->universe : nullptr;
  const auto calib =
      icpmon::load_feature_file(o.calib, icpmon::DatasetRole::Calibration, expected);
  if (!expected) expected = &calib.universe;

  double temperature = o.temperature;
  if (icpmon::uses_temperature(kind) && temperature <= 0.0) {
    if (o.validation.empty())
      throw icpmon::ConfigError("--fn " + o.fn +
                                " requires --temperature or --validation to fit one");
    const auto validation = icpmon::load_feature_file(
        o.validation, icpmon::DatasetRole::Validation, expected);
    temperature = icpmon::fit_temperature(validation);
  }

  auto fn = [&]() -> icpmon::NonconformityFunction {
    switch (kind) {
      case icpmon::NcKind::Knn:
        return icpmon::NonconformityFunction::knn(
            std::make_shared<icpmon::NeighborIndex>(icpmon::build_index(*train)),
            o.k);
      case icpmon::NcKind::OneNn:
        return icpmon::NonconformityFunction::one_nn(
            std::make_shared<icpmon::NeighborIndex>(icpmon::build_index(*train)));
      case icpmon::NcKind::NearestCentroid:
        return icpmon::NonconformityFunction::nearest_centroid(
            icpmon::compute_centroids(*train));
      case icpmon::NcKind::Hinge: return icpmon::NonconformityFunction::hinge();
      case icpmon::NcKind::Margin: return icpmon::NonconformityFunction::margin();
      case icpmon::NcKind::Brier: return icpmon::NonconformityFunction::brier();
      case icpmon::NcKind::TsHinge:
        return icpmon::NonconformityFunction::ts_hinge(temperature);
      case icpmon::NcKind::TsMargin:
        return icpmon::NonconformityFunction::ts_margin(temperature);
      case icpmon::NcKind::TsBrier:
        return icpmon::NonconformityFunction::ts_brier(temperature);
    }
    throw icpmon::ConfigError("unhandled nonconformity kind");
  }();

  const auto monitor = icpmon::calibrate(std::move(fn), calib);
  icpmon::save_monitor(monitor, o.out);

  json j;
  j["command"] = "calibrate";
  j["fn"] = o.fn;
  j["calibration_size"] = monitor.calibration_size();
  if (icpmon::uses_temperature(kind)) j["temperature"] = monitor.fn().temperature();
  j["monitor"] = o.out;
  std::cout << j.dump() << '\n';
}

struct EstimateOpts {
  std::string monitor, validation, rule = "strict";
};

void run_estimate_epsilon(const EstimateOpts& o) {
  const auto m = icpmon::load_monitor(o.monitor);
  const auto validation = icpmon::load_feature_file(
      o.validation, icpmon::DatasetRole::Validation, &m.universe());
  const auto eps = icpmon::estimate_epsilon(
      m, validation, icpmon::inclusion_rule_from_string(o.rule));
  std::printf("%.17g\n", eps.value());
}

struct PredictOpts {
  std::string monitor, input, epsilon, validation, out, rule = "strict";
};

void run_predict(const PredictOpts& o) {
  const auto m = icpmon::load_monitor(o.monitor);
  const auto rule = icpmon::inclusion_rule_from_string(o.rule);
  const auto ds =
      icpmon::load_feature_file(o.input, icpmon::DatasetRole::Test, &m.universe());
  const auto eps = resolve_epsilon(o.epsilon, m, o.validation, rule);

  std::ofstream file;
  if (!o.out.empty()) {
    file.open(o.out, std::ios::binary);
    if (!file) throw icpmon::IoError("cannot open '" + o.out + "' for writing");
  }
  std::ostream& out = o.out.empty() ? std::cout : file;

  out << "id,verdict,set";
  for (icpmon::LabelId c = 0; c < m.universe().num_classes; ++c) out << ",p" << c;
  out << '\n';
  for (const auto& ex : ds.examples) {
    const auto r = m.predict_set(ex.features, eps, rule);
    out << ex.id() << ',' << icpmon::to_string(r.verdict) << ','
        << join_labels(m.universe(), r.label_set);
    for (const double p : r.p_values) out << ',' << icpmon::render_g9(p);
    out << '\n';
  }
  if (!out) throw icpmon::IoError("writing prediction rows failed");
}

struct MonitorOpts {
  std::string monitor, epsilon, validation, model, rule = "strict";
  std::string kind = "auto";
};

void run_monitor(const MonitorOpts& o) {
  const auto m = icpmon::load_monitor(o.monitor);
  const auto rule = icpmon::inclusion_rule_from_string(o.rule);
  const auto eps = resolve_epsilon(o.epsilon, m, o.validation, rule);

  std::optional<icpmon::MlpModel> model;
  if (!o.model.empty()) model = icpmon::load_model(o.model);

  icpmon::FeatureKind kind;
  if (o.kind == "auto") {
    kind = model ? icpmon::FeatureKind::RawTabular : default_stream_kind(m.fn());
  } else if (o.kind == "e") {
    kind = icpmon::FeatureKind::Embeddings;
  } else if (o.kind == "z") {
    kind = icpmon::FeatureKind::Logits;
  } else if (o.kind == "p") {
    kind = icpmon::FeatureKind::Probs;
  } else if (o.kind == "x") {
    kind = icpmon::FeatureKind::RawTabular;
  } else {
    throw icpmon::ConfigError("--kind accepts auto, e, z, p or x");
  }
  if (model && kind != icpmon::FeatureKind::RawTabular)
    throw icpmon::ConfigError("--model implies raw input rows (--kind x)");

  std::string line;
  while (std::getline(std::cin, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::string id = line.substr(0, line.find(','));
    try {
      auto features = icpmon::parse_stream_row(line, kind);
      id = features.id;
      if (model) features = run_reference_model(*model, features);
      const auto r = m.predict_set(features, eps, rule);
      std::cout << id << ',' << icpmon::to_string(r.verdict) << ','
                << join_labels(m.universe(), r.label_set) << '\n'
                << std::flush;
    } catch (const icpmon::Error& e) {
      std::string message = e.what();
      for (char& ch : message)
        if (ch == ',' || ch == '\n') ch = ';';
      std::cout << id << ",error," << message << '\n' << std::flush;
    }
  }
}

struct EvaluateOpts {
  std::string monitor, test, epsilons, rule = "strict";
  std::string grid = "0.001:0.1:0.001";
  std::string out_rows, out_curves, out_json;
};

void run_evaluate(const EvaluateOpts& o) {
  const auto m = icpmon::load_monitor(o.monitor);
  const auto rule = icpmon::inclusion_rule_from_string(o.rule);
  const auto test =
      icpmon::load_feature_file(o.test, icpmon::DatasetRole::Test, &m.universe());

  std::vector<icpmon::SignificanceLevel> eps_list;
  if (!o.epsilons.empty()) {
    for (const auto& cell : icpmon::detail::split_cells(o.epsilons))
      eps_list.emplace_back(parse_positive_double(cell, "--epsilons entry"));
  } else {
    const auto parts = o.grid.find(':') == std::string::npos
                           ? std::vector<std::string>{o.grid}
                           : [&] {
                               std::vector<std::string> p;
                               std::size_t begin = 0;
                               while (true) {
                                 const auto colon = o.grid.find(':', begin);
                                 p.push_back(o.grid.substr(begin, colon - begin));
                                 if (colon == std::string::npos) break;
                                 begin = colon + 1;
                               }
                               return p;
                             }();
    if (parts.size() != 3)
      throw icpmon::ConfigError("--grid expects from:to:step");
    const double from = parse_positive_double(parts[0], "--grid from");
    const double to = parse_positive_double(parts[1], "--grid to");
    const double step = parse_positive_double(parts[2], "--grid step");
    if (from > to) throw icpmon::ConfigError("--grid from exceeds to");
    const auto points = static_cast<std::size_t>((to - from) / step + 0.5) + 1;
    for (std::size_t g = 0; g < points; ++g)
      eps_list.emplace_back(from + static_cast<double>(g) * step);
  }

  auto report = icpmon::evaluate(m, test, eps_list, rule);
  report.config["command"] = "evaluate";
  report.config["fn"] = icpmon::to_string(m.fn().kind());
  report.config["rule"] = o.rule;
  report.config["calibration_size"] = std::to_string(m.calibration_size());
  report.config["test_size"] = std::to_string(test.size());

  if (o.out_rows.empty()) {
    icpmon::write_rows_csv(report.rows, std::cout);
  } else {
    std::ofstream f(o.out_rows, std::ios::binary);
    if (!f) throw icpmon::IoError("cannot open '" + o.out_rows + "' for writing");
    icpmon::write_rows_csv(report.rows, f);
  }
  if (!o.out_curves.empty()) {
    std::ofstream f(o.out_curves, std::ios::binary);
    if (!f) throw icpmon::IoError("cannot open '" + o.out_curves + "' for writing");
    icpmon::write_curves_csv(report.curves, f);
  }
  if (!o.out_json.empty()) {
    std::ofstream f(o.out_json, std::ios::binary);
    if (!f) throw icpmon::IoError("cannot open '" + o.out_json + "' for writing");
    f << icpmon::report_json(report).dump(2) << '\n';
  }
}

struct BenchOpts {
  std::string monitor, test, rule = "strict";
  std::size_t reps = 5;
  double epsilon = 0.05;
};

void run_bench(const BenchOpts& o) {
  const auto m = icpmon::load_monitor(o.monitor);
  const auto test =
      icpmon::load_feature_file(o.test, icpmon::DatasetRole::Test, &m.universe());
  auto stats = icpmon::benchmark_latency(m, test, o.reps,
                                         icpmon::SignificanceLevel(o.epsilon),
                                         icpmon::inclusion_rule_from_string(o.rule));
  stats.artifact_bytes = icpmon::file_size_bytes(o.monitor);

  json j;
  j["command"] = "bench";
  j["fn"] = icpmon::to_string(m.fn().kind());
  j["samples"] = stats.samples;
  j["mean_seconds"] = stats.mean_seconds;
  j["p50_seconds"] = stats.p50_seconds;
  j["p99_seconds"] = stats.p99_seconds;
  j["artifact_bytes"] = stats.artifact_bytes;
  std::cout << j.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conformal assurance monitor: calibrate, predict, evaluate."};
  app.require_subcommand(1);

  auto train_ref = std::make_shared<TrainRefOpts>();
  {
    auto* cmd = app.add_subcommand("train-ref",
                                   "Train the reference classifier on raw tabular data");
    cmd->add_option("--data", train_ref->data, "Raw tabular data file")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--out", train_ref->out, "Model artifact path")->required();
    cmd->add_option("--seed", train_ref->train.seed, "Training seed")
        ->capture_default_str();
    cmd->add_option("--epochs", train_ref->train.epochs, "Maximum epochs")
        ->capture_default_str();
    cmd->add_option("--lr", train_ref->train.learning_rate, "Learning rate")
        ->capture_default_str();
    cmd->add_option("--batch-size", train_ref->train.batch_size, "Mini-batch size")
        ->capture_default_str();
    cmd->add_option("--patience", train_ref->train.early_stop_patience,
                    "Early-stopping patience in epochs")
        ->capture_default_str();
    cmd->add_option("--hidden", train_ref->train.hidden,
                    "Hidden width (0 = rule of thumb)")
        ->capture_default_str();
    cmd->add_option("--holdout-fraction", train_ref->train.holdout_fraction,
                    "Share of training data held out for early stopping")
        ->capture_default_str();
    train_ref->split.attach(cmd);
    cmd->callback([train_ref] { run_train_ref(*train_ref); });
  }

  auto extract = std::make_shared<ExtractOpts>();
  {
    auto* cmd = app.add_subcommand(
        "extract", "Run the reference model over a split and write feature files");
    cmd->add_option("--model", extract->model, "Model artifact")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--data", extract->data, "Raw tabular data file")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--out-dir", extract->out_dir, "Output directory")->required();
    cmd->add_option("--kinds", extract->kinds,
                    "Comma list of feature kinds to write (e, z, p)")
        ->capture_default_str();
    extract->split.attach(cmd);
    cmd->callback([extract] { run_extract(*extract); });
  }

  auto calibrate = std::make_shared<CalibrateOpts>();
  {
    auto* cmd =
        app.add_subcommand("calibrate", "Build and save a calibrated monitor");
    cmd->add_option("--fn", calibrate->fn, "Nonconformity function")
        ->required()
        ->check(CLI::IsMember({"knn", "1nn", "centroid", "hinge", "margin", "brier",
                               "ts-hinge", "ts-margin", "ts-brier"}));
    cmd->add_option("--k", calibrate->k, "Neighbor count for knn")
        ->capture_default_str();
    cmd->add_option("--train", calibrate->train,
                    "Training features (index/centroid source)")
        ->check(CLI::ExistingFile);
    cmd->add_option("--calib", calibrate->calib, "Calibration features")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--validation", calibrate->validation,
                    "Validation features (temperature fitting)")
        ->check(CLI::ExistingFile);
    cmd->add_option("--temperature", calibrate->temperature,
                    "Fixed softmax temperature (0 = fit on --validation)")
        ->capture_default_str();
    cmd->add_option("--out", calibrate->out, "Monitor artifact path")->required();
    cmd->callback([calibrate] { run_calibrate(*calibrate); });
  }

  auto estimate = std::make_shared<EstimateOpts>();
  {
    auto* cmd = app.add_subcommand("estimate-epsilon",
                                   "Smallest significance level without multiples");
    cmd->add_option("--monitor", estimate->monitor, "Monitor artifact")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--validation", estimate->validation, "Validation features")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--rule", estimate->rule, "Inclusion rule: strict or weak")
        ->capture_default_str()
        ->check(CLI::IsMember({"strict", "weak"}));
    cmd->callback([estimate] { run_estimate_epsilon(*estimate); });
  }

  auto predict = std::make_shared<PredictOpts>();
  {
    auto* cmd = app.add_subcommand("predict", "Prediction sets for a feature file");
    cmd->add_option("--monitor", predict->monitor, "Monitor artifact")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--input", predict->input, "Input feature file")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--epsilon", predict->epsilon,
                    "Significance level, or 'auto' with --validation")
        ->required();
    cmd->add_option("--validation", predict->validation,
                    "Validation features for --epsilon auto")
        ->check(CLI::ExistingFile);
    cmd->add_option("--rule", predict->rule, "Inclusion rule: strict or weak")
        ->capture_default_str()
        ->check(CLI::IsMember({"strict", "weak"}));
    cmd->add_option("--out", predict->out, "Write CSV here instead of stdout");
    cmd->callback([predict] { run_predict(*predict); });
  }

  auto monitor = std::make_shared<MonitorOpts>();
  {
    auto* cmd = app.add_subcommand(
        "monitor", "Read feature rows from stdin, print one verdict per row");
    cmd->add_option("--monitor", monitor->monitor, "Monitor artifact")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--epsilon", monitor->epsilon,
                    "Significance level, or 'auto' with --validation")
        ->required();
    cmd->add_option("--validation", monitor->validation,
                    "Validation features for --epsilon auto")
        ->check(CLI::ExistingFile);
    cmd->add_option("--model", monitor->model,
                    "Reference model to featurize raw rows")
        ->check(CLI::ExistingFile);
    cmd->add_option("--kind", monitor->kind,
                    "Stream row kind: auto, e, z, p or x")
        ->capture_default_str()
        ->check(CLI::IsMember({"auto", "e", "z", "p", "x"}));
    cmd->add_option("--rule", monitor->rule, "Inclusion rule: strict or weak")
        ->capture_default_str()
        ->check(CLI::IsMember({"strict", "weak"}));
    cmd->callback([monitor] { run_monitor(*monitor); });
  }

  auto evaluate = std::make_shared<EvaluateOpts>();
  {
    auto* cmd = app.add_subcommand("evaluate",
                                   "Error/multiple/empty rates over significance levels");
    cmd->add_option("--monitor", evaluate->monitor, "Monitor artifact")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--test", evaluate->test, "Labeled test features")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--epsilons", evaluate->epsilons,
                    "Comma list of significance levels (overrides --grid)");
    cmd->add_option("--grid", evaluate->grid, "Significance grid from:to:step")
        ->capture_default_str();
    cmd->add_option("--rule", evaluate->rule, "Inclusion rule: strict or weak")
        ->capture_default_str()
        ->check(CLI::IsMember({"strict", "weak"}));
    cmd->add_option("--out-rows", evaluate->out_rows,
                    "Write the rate table here instead of stdout");
    cmd->add_option("--out-curves", evaluate->out_curves,
                    "Write cumulative error curves CSV here");
    cmd->add_option("--out-json", evaluate->out_json, "Write the JSON summary here");
    cmd->callback([evaluate] { run_evaluate(*evaluate); });
  }

  auto bench = std::make_shared<BenchOpts>();
  {
    auto* cmd = app.add_subcommand("bench", "Per-input prediction latency");
    cmd->add_option("--monitor", bench->monitor, "Monitor artifact")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--test", bench->test, "Feature file to replay")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--reps", bench->reps, "Measured passes over the file")
        ->capture_default_str();
    cmd->add_option("--epsilon", bench->epsilon, "Significance level")
        ->capture_default_str();
    cmd->add_option("--rule", bench->rule, "Inclusion rule: strict or weak")
        ->capture_default_str()
        ->check(CLI::IsMember({"strict", "weak"}));
    cmd->callback([bench] { run_bench(*bench); });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const icpmon::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const icpmon::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
