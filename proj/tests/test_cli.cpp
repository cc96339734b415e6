#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include <json.hpp>

#include "icpmon/icpmon.hpp"
#include "support/synthetic.hpp"

using namespace icpmon;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Fixture {
  std::string bin;
  fs::path dir;
  std::string raw, model, feats, mon_1nn, mon_hinge;

  std::string at(const std::string& name) const { return (dir / name).string(); }

  RunResult run(const std::string& args, const std::string& stdin_path = "") const {
    const auto out_path = at("last_stdout.tmp");
    const auto err_path = at("last_stderr.tmp");
    std::string cmd = "\"" + bin + "\" " + args;
    if (!stdin_path.empty()) cmd += " < \"" + stdin_path + "\"";
    cmd += " > \"" + out_path + "\" 2> \"" + err_path + "\"";
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = read_file(out_path);
    r.err = read_file(err_path);
    return r;
  }

  RunResult must(const std::string& args) const {
    auto r = run(args);
    if (r.code != 0)
      throw std::runtime_error("fixture command failed (" + std::to_string(r.code) +
                               "): " + args + "\n" + r.err);
    return r;
  }
};

const Fixture& fx() {
  static const Fixture fixture = [] {
    Fixture f;
    const char* env = std::getenv("ICPMON_CLI");
    if (!env) throw std::runtime_error("ICPMON_CLI is not set");
    f.bin = env;
    f.dir = fs::temp_directory_path() / "icpmon_cli_tests";
    fs::remove_all(f.dir);
    fs::create_directories(f.dir);

    testsupport::MixtureConfig cfg;
    cfg.classes = 4;
    cfg.dim = 6;
    cfg.separation = 3.0;
    cfg.seed = 13;
    auto ds = testsupport::make_mixture(60, cfg, DatasetRole::Test, "m");
    ds.universe.names = {"alpha", "beta", "gamma", "delta"};
    f.raw = f.at("raw.data");
    testsupport::write_uci(ds, f.raw);

    f.model = f.at("model.bin");
    f.must("train-ref --data \"" + f.raw + "\" --out \"" + f.model +
           "\" --epochs 40 --seed 3");

    f.feats = f.at("feats");
    f.must("extract --model \"" + f.model + "\" --data \"" + f.raw +
           "\" --out-dir \"" + f.feats + "\"");

    f.mon_1nn = f.at("mon_1nn.bin");
    f.must("calibrate --fn 1nn --train \"" + f.feats + "/train.e.csv\" --calib \"" +
           f.feats + "/calib.e.csv\" --out \"" + f.mon_1nn + "\"");

    f.mon_hinge = f.at("mon_hinge.bin");
    f.must("calibrate --fn hinge --calib \"" + f.feats + "/calib.p.csv\" --out \"" +
           f.mon_hinge + "\"");
    return f;
  }();
  return fixture;
}

std::string feats_file(const std::string& name) {
  return fx().feats + "/" + name;
}

std::string join_set(const LabelUniverse& u, const std::vector<LabelId>& labels) {
  std::string out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (i) out += '|';
    out += u.name_of(labels[i]);
  }
  return out;
}

}  // namespace

TEST_CASE("train-ref reports the split sizes and a usable accuracy") {
  const auto r = fx().must("train-ref --data \"" + fx().raw + "\" --out \"" +
                           fx().at("model_again.bin") + "\" --epochs 40 --seed 3");
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["command"] == "train-ref");
  CHECK(j["hidden"] == default_hidden_width(6, 4));
  CHECK(j["train_size"] == 172);
  CHECK(j["test_size"] == 24);
  CHECK(j["test_accuracy"].get<double>() >= 0.8);

  // same data, same seed: the artifact is byte-identical
  CHECK(read_file(fx().at("model_again.bin")) == read_file(fx().model));
}

TEST_CASE("extract writes one file per split role and feature kind") {
  for (const char* role : {"train", "calib", "validation", "test"})
    for (const char* kind : {"e", "z", "p"}) {
      const auto path = feats_file(std::string(role) + "." + kind + ".csv");
      CHECK(fs::exists(path));
    }
  std::ifstream in(feats_file("train.e.csv"));
  std::string meta;
  std::getline(in, meta);
  CHECK(meta == "# icpmon-features v1 classes=4 labels=alpha|beta|gamma|delta");

  const auto train = load_feature_file(feats_file("train.e.csv"),
                                       DatasetRole::ProperTraining);
  CHECK(train.size() == 172);
  CHECK(train.embedding_dim == default_hidden_width(6, 4));
  const auto calib = load_feature_file(feats_file("calib.p.csv"));
  CHECK(calib.size() == 24);
}

TEST_CASE("calibrate reports the calibration size and freezes an artifact") {
  const auto r = fx().must("calibrate --fn 1nn --train \"" + feats_file("train.e.csv") +
                           "\" --calib \"" + feats_file("calib.e.csv") +
                           "\" --out \"" + fx().at("mon_repeat.bin") + "\"");
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["command"] == "calibrate");
  CHECK(j["fn"] == "1nn");
  CHECK(j["calibration_size"] == 24);

  // reruns are byte-identical
  CHECK(read_file(fx().at("mon_repeat.bin")) == read_file(fx().mon_1nn));

  const auto m = load_monitor(fx().mon_1nn);
  CHECK(m.fn().kind() == NcKind::OneNn);
  CHECK(m.calibration_size() == 24);
  CHECK(m.universe().names ==
        std::vector<std::string>{"alpha", "beta", "gamma", "delta"});
}

TEST_CASE("a fitted temperature is reported when calibrating ts rules") {
  const auto r = fx().must("calibrate --fn ts-hinge --calib \"" +
                           feats_file("calib.z.csv") + "\" --validation \"" +
                           feats_file("validation.z.csv") + "\" --out \"" +
                           fx().at("mon_ts.bin") + "\"");
  const auto j = nlohmann::json::parse(r.out);
  const double t = j["temperature"].get<double>();
  CHECK(t > 0.0);
  const auto m = load_monitor(fx().at("mon_ts.bin"));
  CHECK(m.fn().temperature() == t);

  // a fixed temperature is used verbatim
  const auto fixed = fx().must("calibrate --fn ts-hinge --temperature 2.5 --calib \"" +
                               feats_file("calib.z.csv") + "\" --out \"" +
                               fx().at("mon_ts_fixed.bin") + "\"");
  CHECK(nlohmann::json::parse(fixed.out)["temperature"] == 2.5);
}

TEST_CASE("estimate-epsilon prints exactly the library estimate") {
  const auto r = fx().must("estimate-epsilon --monitor \"" + fx().mon_1nn +
                           "\" --validation \"" + feats_file("validation.e.csv") +
                           "\"");
  const double printed = std::stod(r.out);

  const auto m = load_monitor(fx().mon_1nn);
  const auto validation = load_feature_file(feats_file("validation.e.csv"),
                                            DatasetRole::Validation, &m.universe());
  const auto eps = estimate_epsilon(m, validation);
  CHECK(printed == eps.value());  // %.17g round-trips doubles exactly

  const auto weak = fx().must("estimate-epsilon --monitor \"" + fx().mon_1nn +
                              "\" --validation \"" + feats_file("validation.e.csv") +
                              "\" --rule weak");
  CHECK(std::stod(weak.out) ==
        estimate_epsilon(m, validation, InclusionRule::Weak).value());

  // reruns print identical bytes
  const auto again = fx().must("estimate-epsilon --monitor \"" + fx().mon_1nn +
                               "\" --validation \"" + feats_file("validation.e.csv") +
                               "\"");
  CHECK(again.out == r.out);
}

TEST_CASE("predict emits the same rows the library computes") {
  const auto pred = fx().at("pred.csv");
  fx().must("predict --monitor \"" + fx().mon_1nn + "\" --input \"" +
            feats_file("test.e.csv") + "\" --epsilon 0.1 --out \"" + pred + "\"");

  const auto m = load_monitor(fx().mon_1nn);
  const auto test = load_feature_file(feats_file("test.e.csv"), DatasetRole::Test,
                                      &m.universe());
  std::ostringstream want;
  want << "id,verdict,set";
  for (LabelId c = 0; c < m.universe().num_classes; ++c) want << ",p" << c;
  want << '\n';
  for (const auto& ex : test.examples) {
    const auto r = m.predict_set(ex.features, SignificanceLevel(0.1));
    want << ex.id() << ',' << to_string(r.verdict) << ','
         << join_set(m.universe(), r.label_set);
    for (const double p : r.p_values) want << ',' << render_g9(p);
    want << '\n';
  }
  CHECK(read_file(pred) == want.str());

  // deterministic rerun, and --epsilon auto resolves through the validation file
  const auto pred2 = fx().at("pred2.csv");
  fx().must("predict --monitor \"" + fx().mon_1nn + "\" --input \"" +
            feats_file("test.e.csv") + "\" --epsilon 0.1 --out \"" + pred2 + "\"");
  CHECK(read_file(pred2) == want.str());

  const auto r = fx().must("predict --monitor \"" + fx().mon_1nn + "\" --input \"" +
                           feats_file("test.e.csv") +
                           "\" --epsilon auto --validation \"" +
                           feats_file("validation.e.csv") + "\"");
  CHECK(r.out.substr(0, r.out.find('\n')) == "id,verdict,set,p0,p1,p2,p3");
}

TEST_CASE("monitor reads rows from stdin and isolates bad rows") {
  const auto m = load_monitor(fx().mon_1nn);
  const auto test = load_feature_file(feats_file("test.e.csv"), DatasetRole::Test,
                                      &m.universe());

  const auto stream = fx().at("stream.csv");
  {
    std::ofstream out(stream, std::ios::binary);
    for (const auto& ex : test.examples) {
      out << ex.id();
      for (const double v : ex.features.embedding) out << ',' << render_g9(v);
      out << '\n';
    }
    out << "badrow,xyz\n";
    out << "shortrow,1.5\n";
  }

  const auto r = fx().run("monitor --monitor \"" + fx().mon_1nn +
                          "\" --epsilon 0.1",
                          stream);
  REQUIRE(r.code == 0);

  std::vector<std::string> lines;
  std::istringstream in(r.out);
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  REQUIRE(lines.size() == test.size() + 2);

  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto& ex = test.examples[i];
    const auto p = m.predict_set(ex.features, SignificanceLevel(0.1));
    CHECK(lines[i] == ex.id() + "," + to_string(p.verdict) + "," +
                          join_set(m.universe(), p.label_set));
  }
  CHECK(lines[test.size()].rfind("badrow,error,", 0) == 0);
  CHECK(lines[test.size() + 1].rfind("shortrow,error,", 0) == 0);
}

TEST_CASE("evaluate writes rate tables, curves and a JSON summary") {
  const auto rows_path = fx().at("rows.csv");
  const auto curves_path = fx().at("curves.csv");
  const auto json_path = fx().at("report.json");
  fx().must("evaluate --monitor \"" + fx().mon_hinge + "\" --test \"" +
            feats_file("test.p.csv") + "\" --epsilons 0.05,0.1 --out-rows \"" +
            rows_path + "\" --out-curves \"" + curves_path + "\" --out-json \"" +
            json_path + "\"");

  const auto m = load_monitor(fx().mon_hinge);
  const auto test = load_feature_file(feats_file("test.p.csv"), DatasetRole::Test,
                                      &m.universe());
  const auto report =
      evaluate(m, test, {SignificanceLevel(0.05), SignificanceLevel(0.1)});

  std::ostringstream want_rows;
  write_rows_csv(report.rows, want_rows);
  CHECK(read_file(rows_path) == want_rows.str());

  std::ostringstream want_curves;
  write_curves_csv(report.curves, want_curves);
  CHECK(read_file(curves_path) == want_curves.str());

  const auto j = nlohmann::json::parse(read_file(json_path));
  CHECK(j["config"]["command"] == "evaluate");
  CHECK(j["config"]["fn"] == "hinge");
  CHECK(j["config"]["test_size"] == "24");
  REQUIRE(j["rows"].size() == 2);
  CHECK(j["rows"][0]["error_rate"].get<double>() == report.rows[0].error_rate);

  // the default grid covers 100 levels
  const auto grid = fx().must("evaluate --monitor \"" + fx().mon_hinge +
                              "\" --test \"" + feats_file("test.p.csv") + "\"");
  std::size_t newlines = 0;
  for (char c : grid.out) newlines += c == '\n';
  CHECK(newlines == 101);  // header + 100 grid rows
}

TEST_CASE("bench reports sample counts and the artifact footprint") {
  const auto r = fx().must("bench --monitor \"" + fx().mon_1nn + "\" --test \"" +
                           feats_file("test.e.csv") + "\" --reps 2");
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["command"] == "bench");
  CHECK(j["fn"] == "1nn");
  CHECK(j["samples"] == 48);  // 2 passes over 24 inputs
  CHECK(j["artifact_bytes"] == file_size_bytes(fx().mon_1nn));
  CHECK(j["p50_seconds"].get<double>() <= j["p99_seconds"].get<double>());
}

TEST_CASE("usage problems exit 2, data problems exit 1") {
  const auto& f = fx();

  CHECK(f.run("").code == 2);              // a subcommand is required
  CHECK(f.run("frobnicate").code == 2);    // unknown subcommand
  CHECK(f.run("--help").code == 0);
  CHECK(f.run("calibrate --fn hinge --out x.bin").code == 2);  // missing --calib
  CHECK(f.run("calibrate --fn nope --calib \"" + feats_file("calib.p.csv") +
              "\" --out x.bin")
            .code == 2);  // unknown rule name
  CHECK(f.run("calibrate --fn knn --calib \"" + feats_file("calib.e.csv") +
              "\" --out x.bin")
            .code == 2);  // knn without --train
  CHECK(f.run("estimate-epsilon --monitor \"" + f.at("no_such.bin") +
              "\" --validation \"" + feats_file("validation.e.csv") + "\"")
            .code == 2);  // nonexistent path fails the flag check
  CHECK(f.run("predict --monitor \"" + f.mon_1nn + "\" --input \"" +
              feats_file("test.e.csv") + "\" --epsilon auto")
            .code == 2);  // auto without --validation
  CHECK(f.run("predict --monitor \"" + f.mon_1nn + "\" --input \"" +
              feats_file("test.e.csv") + "\" --epsilon 0")
            .code == 2);  // level outside (0, 1)

  const auto garbage = f.at("garbage.bin");
  std::ofstream(garbage, std::ios::binary) << "not an artifact";
  const auto broken = f.run("predict --monitor \"" + garbage + "\" --input \"" +
                            feats_file("test.e.csv") + "\" --epsilon 0.05");
  CHECK(broken.code == 1);
  CHECK(broken.err.find("error:") != std::string::npos);

  const auto nan_file = f.at("nan_rows.csv");
  std::ofstream(nan_file, std::ios::binary)
      << "id,label,p0,p1,p2,p3\nr1,alpha,nan,0.5,0.25,0.25\n";
  CHECK(f.run("predict --monitor \"" + f.mon_hinge + "\" --input \"" + nan_file +
              "\" --epsilon 0.05")
            .code == 1);
}
