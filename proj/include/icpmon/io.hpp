#pragma once

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <ostream>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "icpmon/evaluation.hpp"
#include "icpmon/icp.hpp"
#include "icpmon/kdtree.hpp"
#include "icpmon/mlp.hpp"
#include "icpmon/nonconformity.hpp"
#include "icpmon/types.hpp"

namespace icpmon {

/// What the numeric columns of a feature file mean.
enum class FeatureKind : std::uint8_t {
  Embeddings = 0,  // column prefix e
  Logits = 1,      // column prefix z
  Probs = 2,       // column prefix p
  RawTabular = 3,  // column prefix x; loaded into the embedding slot
};

inline char column_prefix(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::Embeddings: return 'e';
    case FeatureKind::Logits: return 'z';
    case FeatureKind::Probs: return 'p';
    case FeatureKind::RawTabular: return 'x';
  }
  return '?';
}

inline const char* to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::Embeddings: return "embeddings";
    case FeatureKind::Logits: return "logits";
    case FeatureKind::Probs: return "probs";
    case FeatureKind::RawTabular: return "raw-tabular";
  }
  return "?";
}

/// Nine significant digits — the file-format number rendering.
inline std::string render_g9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

namespace detail {

inline std::vector<std::string> split_cells(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t begin = 0;
  while (true) {
    const std::size_t comma = line.find(',', begin);
    if (comma == std::string::npos) {
      cells.push_back(line.substr(begin));
      return cells;
    }
    cells.push_back(line.substr(begin, comma - begin));
    begin = comma + 1;
  }
}

inline bool parse_double(const std::string& cell, double& out) {
  const char* first = cell.data();
  const char* last = first + cell.size();
  const auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc{} && ptr == last;
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

inline std::string join_names(const std::vector<std::string>& names) {
  std::string out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i].empty() || names[i].find_first_of(",|\r\n") != std::string::npos)
      throw IoError("class name '" + names[i] + "' cannot be stored in a feature file");
    if (i) out += '|';
    out += names[i];
  }
  return out;
}

struct FileMeta {
  std::int32_t classes = 0;  // 0 = not stated
  std::vector<std::string> names;
};

// `# icpmon-features v1 classes=C [labels=a|b|c]`
inline FileMeta parse_meta_line(const std::string& line, const std::string& path) {
  FileMeta meta;
  std::string_view rest(line);
  const std::string_view magic = "# icpmon-features v";
  if (!rest.starts_with(magic))
    throw IoError("'" + path + "': unrecognized comment header");
  rest.remove_prefix(magic.size());
  if (!rest.starts_with("1"))
    throw IoError("'" + path + "': unsupported feature-file version");
  rest.remove_prefix(1);
  while (!rest.empty()) {
    if (rest.front() == ' ') {
      rest.remove_prefix(1);
      continue;
    }
    const std::size_t eq = rest.find('=');
    if (eq == std::string_view::npos)
      throw IoError("'" + path + "': malformed header attribute");
    const std::string_view key = rest.substr(0, eq);
    rest.remove_prefix(eq + 1);
    const std::size_t end = rest.find(' ');
    const std::string_view value =
        end == std::string_view::npos ? rest : rest.substr(0, end);
    rest.remove_prefix(value.size());
    if (key == "classes") {
      int c = 0;
      const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), c);
      if (ec != std::errc{} || ptr != value.data() + value.size() || c < 2)
        throw IoError("'" + path + "': bad classes attribute");
      meta.classes = c;
    } else if (key == "labels") {
      std::string token;
      for (char ch : value) {
        if (ch == '|') {
          meta.names.push_back(token);
          token.clear();
        } else {
          token += ch;
        }
      }
      meta.names.push_back(token);
    } else {
      throw IoError("'" + path + "': unknown header attribute '" + std::string(key) + "'");
    }
  }
  if (!meta.names.empty()) {
    if (meta.classes == 0) meta.classes = static_cast<std::int32_t>(meta.names.size());
    if (meta.classes != static_cast<std::int32_t>(meta.names.size()))
      throw IoError("'" + path + "': classes attribute disagrees with the label table");
  }
  return meta;
}

// `id,label,e0,e1,...` — contiguous indices from 0, single prefix letter.
inline std::pair<FeatureKind, std::int32_t> parse_header(
    const std::vector<std::string>& cells, const std::string& path) {
  if (cells.size() < 3 || cells[0] != "id" || cells[1] != "label")
    throw IoError("'" + path + "': malformed header (expected id,label,<vector columns>)");
  const char prefix = cells[2].empty() ? '?' : cells[2][0];
  FeatureKind kind;
  switch (prefix) {
    case 'e': kind = FeatureKind::Embeddings; break;
    case 'z': kind = FeatureKind::Logits; break;
    case 'p': kind = FeatureKind::Probs; break;
    case 'x': kind = FeatureKind::RawTabular; break;
    default:
      throw IoError("'" + path + "': unknown feature column prefix in '" + cells[2] + "'");
  }
  for (std::size_t i = 2; i < cells.size(); ++i) {
    const std::string expect = std::string(1, prefix) + std::to_string(i - 2);
    if (cells[i] != expect)
      throw IoError("'" + path + "': header column " + std::to_string(i) +
                    " is '" + cells[i] + "', expected '" + expect + "'");
  }
  return {kind, static_cast<std::int32_t>(cells.size() - 2)};
}

inline void throw_first_violation(const Dataset& ds, const std::string& path) {
  const auto violations = validate_dataset(ds);
  if (!violations.empty())
    throw DataError("'" + path + "': " + violations.front().rule +
                    (violations.front().example_id == "-"
                         ? ""
                         : " (example " + violations.front().example_id + ")"));
}

}  // namespace detail

/// Loads either this library's feature CSV (optional `# icpmon-features`
/// header line, then `id,label,<prefix>0..`) or a raw UCI-style table
/// (numeric columns with a trailing class name, no header; class indices
/// assigned in first-appearance order). When `expected` is given the
/// file's labels must resolve in that universe.
inline Dataset load_feature_file(const std::string& path,
                                 DatasetRole role = DatasetRole::Test,
                                 const LabelUniverse* expected = nullptr) {
  const auto lines = detail::read_lines(path);
  std::size_t row = 0;
  while (row < lines.size() && lines[row].empty()) ++row;
  if (row == lines.size()) throw IoError("'" + path + "': empty file");

  Dataset ds;
  ds.role = role;

  detail::FileMeta meta;
  bool own_format = false;
  if (lines[row][0] == '#') {
    meta = detail::parse_meta_line(lines[row], path);
    ++row;
    while (row < lines.size() && lines[row].empty()) ++row;
    if (row == lines.size()) throw IoError("'" + path + "': header line missing");
    own_format = true;
  }

  auto first_cells = detail::split_cells(lines[row]);
  if (!own_format) own_format = !first_cells.empty() && first_cells[0] == "id";

  if (own_format) {
    const auto [kind, width] = detail::parse_header(first_cells, path);
    ++row;

    if (expected) {
      if (meta.classes != 0 && meta.classes != expected->num_classes)
        throw DataError("'" + path + "': class count " + std::to_string(meta.classes) +
                        " does not match the expected universe (" +
                        std::to_string(expected->num_classes) + ")");
      if (!meta.names.empty() && expected->has_names() && meta.names != expected->names)
        throw DataError("'" + path + "': label names do not match the expected universe");
      ds.universe = *expected;
    } else if (meta.classes != 0) {
      ds.universe.num_classes = meta.classes;
      ds.universe.names = meta.names;
    }
    const bool infer_classes = ds.universe.num_classes == 0;
    if (infer_classes &&
        (kind == FeatureKind::Logits || kind == FeatureKind::Probs))
      ds.universe.num_classes = width;

    LabelId max_label = -1;
    for (; row < lines.size(); ++row) {
      if (lines[row].empty()) continue;
      const auto cells = detail::split_cells(lines[row]);
      if (cells.size() != first_cells.size())
        throw IoError("'" + path + "': row " + std::to_string(row + 1) + " has " +
                      std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(first_cells.size()));
      LabeledExample ex;
      ex.features.id = cells[0];
      if (ex.features.id.empty())
        throw IoError("'" + path + "': row " + std::to_string(row + 1) + " has an empty id");

      if (ds.universe.num_classes > 0 || ds.universe.has_names()) {
        ex.label = ds.universe.index_of(cells[1]);
        if (ex.label < 0)
          throw DataError("'" + path + "': row " + std::to_string(row + 1) +
                          " has unknown label '" + cells[1] + "'");
      } else {
        int v = 0;
        const auto [ptr, ec] =
            std::from_chars(cells[1].data(), cells[1].data() + cells[1].size(), v);
        if (ec != std::errc{} || ptr != cells[1].data() + cells[1].size() || v < 0)
          throw DataError("'" + path + "': row " + std::to_string(row + 1) +
                          " has unknown label '" + cells[1] + "'");
        ex.label = static_cast<LabelId>(v);
      }
      max_label = std::max(max_label, ex.label);

      std::vector<double> values(static_cast<std::size_t>(width));
      for (std::int32_t i = 0; i < width; ++i) {
        double v = 0.0;
        if (!detail::parse_double(cells[static_cast<std::size_t>(i) + 2], v))
          throw IoError("'" + path + "': row " + std::to_string(row + 1) +
                        " column " + std::to_string(i + 3) + " is not a number");
        if (!std::isfinite(v))
          throw DataError("'" + path + "': row " + std::to_string(row + 1) +
                          " contains a non-finite value");
        values[static_cast<std::size_t>(i)] = v;
      }
      switch (kind) {
        case FeatureKind::Embeddings:
        case FeatureKind::RawTabular:
          ex.features.embedding = std::move(values);
          break;
        case FeatureKind::Logits:
          ex.features.logits = std::move(values);
          break;
        case FeatureKind::Probs:
          ex.features.probs = std::move(values);
          break;
      }
      ds.examples.push_back(std::move(ex));
    }
    if (kind == FeatureKind::Embeddings || kind == FeatureKind::RawTabular)
      ds.embedding_dim = width;
    if (ds.universe.num_classes == 0) ds.universe.num_classes = max_label + 1;
    if (!ds.examples.empty() && max_label >= ds.universe.num_classes)
      throw DataError("'" + path + "': label " + std::to_string(max_label) +
                      " outside the declared universe");
  } else {
    // UCI-style raw table: n numeric cells + trailing class name per row.
    if (first_cells.size() < 2)
      throw IoError("'" + path + "': unrecognized file format");
    const std::size_t width = first_cells.size() - 1;
    {
      double probe = 0.0;
      if (detail::parse_double(first_cells.back(), probe))
        throw IoError("'" + path + "': unrecognized file format (no header and no "
                      "trailing class-name column)");
    }
    for (; row < lines.size(); ++row) {
      if (lines[row].empty()) continue;
      const auto cells = detail::split_cells(lines[row]);
      if (cells.size() != width + 1)
        throw IoError("'" + path + "': row " + std::to_string(row + 1) + " has " +
                      std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(width + 1));
      LabeledExample ex;
      ex.features.id = "r" + std::to_string(ds.examples.size());
      ex.features.embedding.resize(width);
      for (std::size_t i = 0; i < width; ++i) {
        double v = 0.0;
        if (!detail::parse_double(cells[i], v))
          throw IoError("'" + path + "': row " + std::to_string(row + 1) +
                        " column " + std::to_string(i + 1) + " is not a number");
        if (!std::isfinite(v))
          throw DataError("'" + path + "': row " + std::to_string(row + 1) +
                          " contains a non-finite value");
        ex.features.embedding[i] = v;
      }
      const std::string& name = cells.back();
      if (name.empty())
        throw DataError("'" + path + "': row " + std::to_string(row + 1) +
                        " has an empty class name");
      if (expected) {
        ex.label = expected->index_of(name);
        if (ex.label < 0)
          throw DataError("'" + path + "': row " + std::to_string(row + 1) +
                          " has unknown label '" + name + "'");
      } else {
        const auto it =
            std::find(ds.universe.names.begin(), ds.universe.names.end(), name);
        if (it == ds.universe.names.end()) {
          ds.universe.names.push_back(name);
          ex.label = static_cast<LabelId>(ds.universe.names.size() - 1);
        } else {
          ex.label = static_cast<LabelId>(it - ds.universe.names.begin());
        }
      }
      ds.examples.push_back(std::move(ex));
    }
    if (expected) ds.universe = *expected;
    else ds.universe.num_classes = static_cast<std::int32_t>(ds.universe.names.size());
    ds.embedding_dim = static_cast<std::int32_t>(width);
  }

  detail::throw_first_violation(ds, path);
  return ds;
}

/// Writes one feature kind of a dataset in the library's CSV layout.
inline void save_feature_file(const Dataset& ds, const std::string& path,
                              FeatureKind kind) {
  if (ds.empty()) throw DataError("refusing to save an empty dataset");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");

  out << "# icpmon-features v1 classes=" << ds.universe.num_classes;
  if (ds.universe.has_names())
    out << " labels=" << detail::join_names(ds.universe.names);
  out << '\n';

  const auto vector_of = [&](const LabeledExample& ex) -> const std::vector<double>& {
    switch (kind) {
      case FeatureKind::Embeddings:
      case FeatureKind::RawTabular:
        if (!ex.features.has_embedding())
          throw FeatureMissingError("example " + ex.id() + " carries no embedding");
        return ex.features.embedding;
      case FeatureKind::Logits:
        if (!ex.features.has_logits())
          throw FeatureMissingError("example " + ex.id() + " carries no logits");
        return ex.features.logits;
      case FeatureKind::Probs:
        if (!ex.features.has_probs())
          throw FeatureMissingError("example " + ex.id() + " carries no probabilities");
        return ex.features.probs;
    }
    throw ConfigError("unhandled feature kind");
  };

  const std::size_t width = vector_of(ds.examples.front()).size();
  out << "id,label";
  for (std::size_t i = 0; i < width; ++i)
    out << ',' << column_prefix(kind) << i;
  out << '\n';

  for (const auto& ex : ds.examples) {
    if (ex.id().empty() || ex.id().find_first_of(",\r\n") != std::string::npos)
      throw IoError("example id '" + ex.id() + "' cannot be stored in a feature file");
    const auto& v = vector_of(ex);
    if (v.size() != width)
      throw DimensionMismatchError("example " + ex.id() +
                                   " vector length differs from the first row");
    out << ex.id() << ',';
    if (ds.universe.has_names()) out << ds.universe.name_of(ex.label);
    else out << ex.label;
    for (double x : v) out << ',' << render_g9(x);
    out << '\n';
  }
  if (!out) throw IoError("write to '" + path + "' failed");
}

/// One row of a label-less monitored stream: `id,v0,v1,...`.
inline Features parse_stream_row(const std::string& line, FeatureKind kind) {
  const auto cells = detail::split_cells(line);
  if (cells.size() < 2) throw IoError("stream row needs an id and at least one value");
  Features f;
  f.id = cells[0];
  if (f.id.empty()) throw IoError("stream row has an empty id");
  std::vector<double> values(cells.size() - 1);
  for (std::size_t i = 1; i < cells.size(); ++i) {
    double v = 0.0;
    if (!detail::parse_double(cells[i], v))
      throw IoError("stream row '" + f.id + "' column " + std::to_string(i + 1) +
                    " is not a number");
    if (!std::isfinite(v))
      throw DataError("stream row '" + f.id + "' contains a non-finite value");
    values[i - 1] = v;
  }
  switch (kind) {
    case FeatureKind::Embeddings:
    case FeatureKind::RawTabular:
      f.embedding = std::move(values);
      break;
    case FeatureKind::Logits:
      f.logits = std::move(values);
      break;
    case FeatureKind::Probs:
      f.probs = std::move(values);
      break;
  }
  return f;
}

// ---------------------------------------------------------------------------
// Splits

struct SplitConfig {
  double test_fraction = 0.10;
  double train_fraction_of_rest = 0.80;
  double calib_share_of_holdout = 0.50;
  std::uint64_t seed = 1;

  void validate() const {
    const auto in_unit = [](double f) { return f > 0.0 && f < 1.0; };
    if (!in_unit(test_fraction) || !in_unit(train_fraction_of_rest) ||
        !in_unit(calib_share_of_holdout))
      throw ConfigError("split fractions must lie strictly inside (0, 1)");
  }
};

struct Splits {
  Dataset train;
  Dataset calibration;
  Dataset validation;
  Dataset test;
};

/// Seeded, class-stratified partition into train / calibration /
/// validation / test. Within each class: test_fraction goes to test,
/// train_fraction_of_rest of the remainder to train, and the leftover
/// holdout splits calibration/validation by calib_share_of_holdout.
inline Splits split(const Dataset& ds, const SplitConfig& cfg) {
  cfg.validate();
  if (ds.empty()) throw DataError("cannot split an empty dataset");
  const std::int32_t C = ds.universe.num_classes;

  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(C));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const LabelId y = ds.examples[i].label;
    if (y < 0 || y >= C)
      throw DataError("example " + ds.examples[i].id() + " label outside the universe");
    by_class[static_cast<std::size_t>(y)].push_back(i);
  }
  for (std::int32_t c = 0; c < C; ++c)
    if (by_class[static_cast<std::size_t>(c)].size() < 4)
      throw DataError("class " + ds.universe.name_of(c) + " has only " +
                      std::to_string(by_class[static_cast<std::size_t>(c)].size()) +
                      " examples; stratified splitting needs at least 4");

  std::mt19937 rng(static_cast<std::mt19937::result_type>(cfg.seed));
  std::vector<std::size_t> train_idx, calib_idx, val_idx, test_idx;
  for (std::int32_t c = 0; c < C; ++c) {
    auto& bucket = by_class[static_cast<std::size_t>(c)];
    std::shuffle(bucket.begin(), bucket.end(), rng);
    const auto n = static_cast<double>(bucket.size());
    const auto n_test = static_cast<std::size_t>(std::llround(cfg.test_fraction * n));
    const std::size_t rest = bucket.size() - n_test;
    const auto n_train = static_cast<std::size_t>(
        std::llround(cfg.train_fraction_of_rest * static_cast<double>(rest)));
    const std::size_t holdout = rest - n_train;
    const auto n_calib = static_cast<std::size_t>(
        std::llround(cfg.calib_share_of_holdout * static_cast<double>(holdout)));
    if (n_train == 0)
      throw DataError("class " + ds.universe.name_of(c) +
                      " receives no training examples under this split");
    std::size_t at = 0;
    for (std::size_t i = 0; i < n_train; ++i) train_idx.push_back(bucket[at++]);
    for (std::size_t i = 0; i < n_calib; ++i) calib_idx.push_back(bucket[at++]);
    for (std::size_t i = 0; i + n_calib < holdout; ++i) val_idx.push_back(bucket[at++]);
    while (at < bucket.size()) test_idx.push_back(bucket[at++]);
  }

  const auto materialize = [&](std::vector<std::size_t>& idx, DatasetRole role) {
    std::sort(idx.begin(), idx.end());
    Dataset out;
    out.universe = ds.universe;
    out.embedding_dim = ds.embedding_dim;
    out.role = role;
    out.examples.reserve(idx.size());
    for (std::size_t i : idx) out.examples.push_back(ds.examples[i]);
    return out;
  };

  Splits s;
  s.train = materialize(train_idx, DatasetRole::ProperTraining);
  s.calibration = materialize(calib_idx, DatasetRole::Calibration);
  s.validation = materialize(val_idx, DatasetRole::Validation);
  s.test = materialize(test_idx, DatasetRole::Test);

  if (s.train.empty() || s.calibration.empty() || s.validation.empty() ||
      s.test.empty())
    throw DataError("dataset too small: a split came out empty");
  return s;
}

// ---------------------------------------------------------------------------
// Binary artifacts (explicit little-endian)

namespace detail {

inline void to_little_endian(unsigned char* bytes, std::size_t n) {
  if constexpr (std::endian::native == std::endian::big)
    std::reverse(bytes, bytes + n);
}

class ByteWriter {
 public:
  template <typename T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    to_little_endian(bytes, sizeof(T));
    buf_.insert(buf_.end(), bytes, bytes + sizeof(T));
  }

  void put_f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    put(bits);
  }

  void put_f64_span(std::span<const double> vs) {
    for (double v : vs) put_f64(v);
  }

  void put_str(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }

  void write_to(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(buf_.data()),
              static_cast<std::streamsize>(buf_.size()));
    if (!out) throw IoError("write to '" + path + "' failed");
  }

 private:
  std::vector<unsigned char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::string& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }

  template <typename T>
  T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    need(sizeof(T));
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, buf_.data() + off_, sizeof(T));
    to_little_endian(bytes, sizeof(T));  // symmetric swap
    off_ += sizeof(T);
    T v;
    std::memcpy(&v, bytes, sizeof(T));
    return v;
  }

  double get_f64() {
    const std::uint64_t bits = get<std::uint64_t>();
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }

  std::vector<double> get_f64_vec(std::size_t n) {
    std::vector<double> vs(n);
    for (double& v : vs) v = get_f64();
    return vs;
  }

  std::string get_str() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(buf_.data() + off_), n);
    off_ += n;
    return s;
  }

  void expect_magic(const char (&magic)[5], const char* what) {
    need(4);
    if (std::memcmp(buf_.data() + off_, magic, 4) != 0)
      throw IoError("'" + path_ + "' is not a " + what + " artifact");
    off_ += 4;
  }

  void finish() {
    if (off_ != buf_.size())
      throw IoError("'" + path_ + "': trailing bytes after the last section");
  }

 private:
  void need(std::size_t n) {
    if (off_ + n > buf_.size()) throw IoError("'" + path_ + "': truncated artifact file");
  }

  std::string path_;
  std::vector<unsigned char> buf_;
  std::size_t off_ = 0;
};

inline void put_universe(ByteWriter& w, const LabelUniverse& u) {
  w.put(u.num_classes);
  w.put(static_cast<std::uint8_t>(u.has_names() ? 1 : 0));
  if (u.has_names())
    for (const auto& name : u.names) w.put_str(name);
}

inline LabelUniverse get_universe(ByteReader& r) {
  LabelUniverse u;
  u.num_classes = r.get<std::int32_t>();
  if (u.num_classes < 2) throw IoError("artifact declares fewer than 2 classes");
  if (r.get<std::uint8_t>() != 0) {
    u.names.reserve(static_cast<std::size_t>(u.num_classes));
    for (std::int32_t i = 0; i < u.num_classes; ++i) u.names.push_back(r.get_str());
  }
  return u;
}

}  // namespace detail

inline constexpr std::uint32_t kMonitorArtifactVersion = 1;
inline constexpr std::uint32_t kModelArtifactVersion = 1;

/// Single-file monitor artifact: universe, scoring-rule configuration
/// (with index points or centroids where applicable), calibration scores.
/// The k-d tree itself is rebuilt on load — the build is deterministic,
/// so every loaded p-value matches the original bit for bit.
inline void save_monitor(const CalibratedMonitor& m, const std::string& path) {
  detail::ByteWriter w;
  w.put('I'); w.put('C'); w.put('P'); w.put('M');
  w.put(kMonitorArtifactVersion);
  detail::put_universe(w, m.universe());

  const auto& fn = m.fn();
  w.put(static_cast<std::uint8_t>(fn.kind()));
  w.put(static_cast<std::int32_t>(fn.k()));
  w.put_f64(fn.temperature());

  const auto& centroids = fn.centroids();
  w.put(static_cast<std::uint8_t>(centroids.empty() ? 0 : 1));
  if (!centroids.empty()) {
    w.put(static_cast<std::uint32_t>(centroids.size()));
    w.put(static_cast<std::uint32_t>(centroids.front().size()));
    for (const auto& c : centroids) w.put_f64_span(c);
  }

  const auto& index = fn.index();
  w.put(static_cast<std::uint8_t>(index ? 1 : 0));
  if (index) {
    w.put(static_cast<std::uint64_t>(index->size()));
    w.put(index->dim());
    w.put_f64_span(index->coords());
    for (LabelId l : index->labels()) w.put(l);
  }

  w.put(static_cast<std::uint64_t>(m.calibration_scores().size()));
  w.put_f64_span(m.calibration_scores());
  w.write_to(path);
}

inline CalibratedMonitor load_monitor(const std::string& path) {
  detail::ByteReader r(path);
  r.expect_magic("ICPM", "monitor");
  const auto version = r.get<std::uint32_t>();
  if (version != kMonitorArtifactVersion)
    throw IoError("'" + path + "': unsupported monitor artifact version " +
                  std::to_string(version));
  LabelUniverse universe = detail::get_universe(r);

  const auto kind_raw = r.get<std::uint8_t>();
  if (kind_raw > static_cast<std::uint8_t>(NcKind::TsBrier))
    throw IoError("'" + path + "': unknown nonconformity kind in artifact");
  const NcKind kind = static_cast<NcKind>(kind_raw);
  const auto k = r.get<std::int32_t>();
  const double temperature = r.get_f64();

  std::vector<std::vector<double>> centroids;
  if (r.get<std::uint8_t>() != 0) {
    const auto c = r.get<std::uint32_t>();
    const auto d = r.get<std::uint32_t>();
    centroids.resize(c);
    for (auto& row : centroids) row = r.get_f64_vec(d);
  }

  std::shared_ptr<const NeighborIndex> index;
  if (r.get<std::uint8_t>() != 0) {
    const auto n = r.get<std::uint64_t>();
    const auto dim = r.get<std::int32_t>();
    auto coords = r.get_f64_vec(static_cast<std::size_t>(n) *
                                static_cast<std::size_t>(dim));
    std::vector<LabelId> labels(static_cast<std::size_t>(n));
    for (auto& l : labels) l = r.get<LabelId>();
    index = std::make_shared<NeighborIndex>(std::move(coords), std::move(labels), dim);
  }

  const auto m_count = r.get<std::uint64_t>();
  auto scores = r.get_f64_vec(static_cast<std::size_t>(m_count));
  r.finish();

  NonconformityFunction fn = [&] {
    switch (kind) {
      case NcKind::Knn:
        if (!index) throw IoError("'" + path + "': knn artifact without an index");
        return NonconformityFunction::knn(index, k);
      case NcKind::OneNn:
        if (!index) throw IoError("'" + path + "': 1nn artifact without an index");
        return NonconformityFunction::one_nn(index);
      case NcKind::NearestCentroid:
        if (centroids.empty())
          throw IoError("'" + path + "': centroid artifact without centroids");
        return NonconformityFunction::nearest_centroid(std::move(centroids));
      case NcKind::Hinge: return NonconformityFunction::hinge();
      case NcKind::Margin: return NonconformityFunction::margin();
      case NcKind::Brier: return NonconformityFunction::brier();
      case NcKind::TsHinge: return NonconformityFunction::ts_hinge(temperature);
      case NcKind::TsMargin: return NonconformityFunction::ts_margin(temperature);
      case NcKind::TsBrier: return NonconformityFunction::ts_brier(temperature);
    }
    throw IoError("'" + path + "': unknown nonconformity kind in artifact");
  }();

  return CalibratedMonitor(std::move(fn), std::move(scores), std::move(universe));
}

/// Reference-model weights artifact.
inline void save_model(const MlpModel& m, const std::string& path) {
  detail::ByteWriter w;
  w.put('I'); w.put('C'); w.put('P'); w.put('W');
  w.put(kModelArtifactVersion);
  w.put(m.d_in);
  w.put(m.hidden);
  w.put(m.num_classes);
  w.put_f64_span(m.input_mean);
  w.put_f64_span(m.input_scale);
  w.put_f64_span(m.w1);
  w.put_f64_span(m.b1);
  w.put_f64_span(m.w2);
  w.put_f64_span(m.b2);
  w.write_to(path);
}

inline MlpModel load_model(const std::string& path) {
  detail::ByteReader r(path);
  r.expect_magic("ICPW", "model");
  const auto version = r.get<std::uint32_t>();
  if (version != kModelArtifactVersion)
    throw IoError("'" + path + "': unsupported model artifact version " +
                  std::to_string(version));
  MlpModel m;
  m.d_in = r.get<std::int32_t>();
  m.hidden = r.get<std::int32_t>();
  m.num_classes = r.get<std::int32_t>();
  if (m.d_in < 1 || m.hidden < 1 || m.num_classes < 2)
    throw IoError("'" + path + "': degenerate model dimensions");
  const auto d = static_cast<std::size_t>(m.d_in);
  const auto h = static_cast<std::size_t>(m.hidden);
  const auto C = static_cast<std::size_t>(m.num_classes);
  m.input_mean = r.get_f64_vec(d);
  m.input_scale = r.get_f64_vec(d);
  m.w1 = r.get_f64_vec(h * d);
  m.b1 = r.get_f64_vec(h);
  m.w2 = r.get_f64_vec(C * h);
  m.b2 = r.get_f64_vec(C);
  r.finish();
  return m;
}

inline std::uint64_t file_size_bytes(const std::string& path) {
  std::error_code ec;
  const auto n = std::filesystem::file_size(path, ec);
  if (ec) throw IoError("cannot stat '" + path + "': " + ec.message());
  return static_cast<std::uint64_t>(n);
}

// ---------------------------------------------------------------------------
// Report emission

inline void write_rows_csv(const std::vector<EpsilonRow>& rows, std::ostream& out) {
  out << "epsilon,error_rate,multiple_rate,empty_rate,single_rate\n";
  for (const auto& r : rows)
    out << render_g9(r.epsilon) << ',' << render_g9(r.error_rate) << ','
        << render_g9(r.multiple_rate) << ',' << render_g9(r.empty_rate) << ','
        << render_g9(r.single_rate) << '\n';
}

inline void write_curves_csv(const std::vector<CumulativeCurve>& curves,
                             std::ostream& out) {
  out << "epsilon,input_index,cumulative_errors\n";
  for (const auto& curve : curves)
    for (std::size_t i = 0; i < curve.cumulative_errors.size(); ++i)
      out << render_g9(curve.epsilon) << ',' << i << ','
          << curve.cumulative_errors[i] << '\n';
}

/// JSON summary of a report. nlohmann::json keeps keys sorted, so the
/// serialization is deterministic.
inline nlohmann::json report_json(const EvaluationReport& report) {
  nlohmann::json j;
  j["config"] = report.config;
  auto& rows = j["rows"];
  rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"epsilon", r.epsilon},
                    {"error_rate", r.error_rate},
                    {"multiple_rate", r.multiple_rate},
                    {"empty_rate", r.empty_rate},
                    {"single_rate", r.single_rate}});
  }
  if (report.latency) {
    j["latency"] = {{"samples", report.latency->samples},
                    {"mean_seconds", report.latency->mean_seconds},
                    {"p50_seconds", report.latency->p50_seconds},
                    {"p99_seconds", report.latency->p99_seconds},
                    {"artifact_bytes", report.latency->artifact_bytes}};
  }
  return j;
}

}  // namespace icpmon
