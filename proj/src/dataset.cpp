#include "clampcal/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "clampcal/error.hpp"

namespace clampcal {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(trim(line.substr(start)));
      break;
    }
    fields.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
  return fields;
}

struct CsvTable {
  std::size_t num_columns = 0;  // excluding the label column
  std::vector<double> values;
  std::vector<int> labels;
};

std::string line_prefix(std::size_t line_no) { return "line " + std::to_string(line_no) + ": "; }

// Parses `<prefix>_0,...,<prefix>_{C-1},label` tables.
CsvTable parse_table(std::string_view text, std::string_view prefix) {
  CsvTable table;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  bool have_header = false;

  while (pos <= text.size()) {
    auto eol = text.find('\n', pos);
    std::string_view line =
        text.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
    pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
    ++line_no;
    if (trim(line).empty()) continue;

    auto fields = split_fields(line);
    if (!have_header) {
      if (fields.size() < 2 || fields.back() != "label") {
        throw ValidationError("malformed header: expected " + std::string(prefix) +
                              "_0,...,label");
      }
      for (std::size_t c = 0; c + 1 < fields.size(); ++c) {
        if (fields[c] != std::string(prefix) + "_" + std::to_string(c)) {
          throw ValidationError("malformed header: column " + std::to_string(c + 1) +
                                " is '" + std::string(fields[c]) + "', expected " +
                                std::string(prefix) + "_" + std::to_string(c));
        }
      }
      table.num_columns = fields.size() - 1;
      have_header = true;
      continue;
    }

    if (fields.size() != table.num_columns + 1) {
      throw ValidationError(line_prefix(line_no) + "expected " +
                            std::to_string(table.num_columns + 1) + " fields, found " +
                            std::to_string(fields.size()));
    }
    for (std::size_t c = 0; c < table.num_columns; ++c) {
      auto f = fields[c];
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (f.empty() || ec != std::errc() || ptr != f.data() + f.size()) {
        throw ValidationError(line_prefix(line_no) + "non-numeric field '" + std::string(f) +
                              "' in column " + std::to_string(c + 1));
      }
      if (!std::isfinite(v)) {
        throw ValidationError(line_prefix(line_no) + "NaN/Inf entry in column " +
                              std::to_string(c + 1));
      }
      table.values.push_back(v);
    }
    auto f = fields.back();
    int label = 0;
    auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), label);
    if (f.empty() || ec != std::errc() || ptr != f.data() + f.size()) {
      throw ValidationError(line_prefix(line_no) + "non-integer label '" + std::string(f) + "'");
    }
    table.labels.push_back(label);
  }
  if (!have_header) throw ValidationError("malformed header: file is empty");
  return table;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open file '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void check_label_range(const std::vector<int>& labels, std::size_t k) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw ValidationError("sample " + std::to_string(i) + ": label " +
                            std::to_string(labels[i]) + " out of range [0," +
                            std::to_string(k) + ")");
    }
  }
}

template <typename Row>
void write_csv(std::ostringstream& out, std::string_view prefix, std::size_t cols,
               std::size_t rows, Row row_at, const std::vector<int>& labels) {
  for (std::size_t c = 0; c < cols; ++c) out << prefix << '_' << c << ',';
  out << "label\n";
  for (std::size_t i = 0; i < rows; ++i) {
    for (double v : row_at(i)) out << format_real(v) << ',';
    out << labels[i] << '\n';
  }
}

}  // namespace

std::string format_real(double value) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

LogitDataset::LogitDataset(Matrix logits, std::vector<int> labels)
    : logits_(std::move(logits)), labels_(std::move(labels)) {
  if (logits_.rows() < 1) throw ValidationError("dataset must contain at least one sample");
  if (logits_.cols() < 2) throw ValidationError("dataset must have at least two classes");
  if (labels_.size() != logits_.rows()) {
    throw ValidationError("label count " + std::to_string(labels_.size()) +
                          " does not match sample count " + std::to_string(logits_.rows()));
  }
  for (std::size_t i = 0; i < logits_.rows(); ++i) {
    for (double v : logits_.row(i)) {
      if (!std::isfinite(v)) {
        throw ValidationError("sample " + std::to_string(i) + ": NaN/Inf logit");
      }
    }
  }
  check_label_range(labels_, logits_.cols());
}

LogitDataset LogitDataset::subset(std::span<const std::size_t> indices) const {
  std::vector<int> labels;
  labels.reserve(indices.size());
  for (auto i : indices) labels.push_back(labels_[i]);
  return {logits_.select_rows(indices), std::move(labels)};
}

InputDataset::InputDataset(Matrix features, std::vector<int> labels,
                           std::optional<std::size_t> num_classes)
    : features_(std::move(features)), labels_(std::move(labels)), num_classes_(num_classes) {
  if (features_.rows() < 1) throw ValidationError("dataset must contain at least one sample");
  if (features_.cols() < 1) throw ValidationError("dataset must have at least one feature");
  if (labels_.size() != features_.rows()) {
    throw ValidationError("label count " + std::to_string(labels_.size()) +
                          " does not match sample count " + std::to_string(features_.rows()));
  }
  for (std::size_t i = 0; i < features_.rows(); ++i) {
    for (double v : features_.row(i)) {
      if (!std::isfinite(v)) {
        throw ValidationError("sample " + std::to_string(i) + ": NaN/Inf feature");
      }
    }
  }
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] < 0) {
      throw ValidationError("sample " + std::to_string(i) + ": label " +
                            std::to_string(labels_[i]) + " is negative");
    }
  }
  if (num_classes_) {
    if (*num_classes_ < 2) throw ValidationError("num_classes must be at least 2");
    check_label_range(labels_, *num_classes_);
  }
}

void InputDataset::check_labels(std::size_t num_classes) const {
  check_label_range(labels_, num_classes);
}

InputDataset InputDataset::subset(std::span<const std::size_t> indices) const {
  std::vector<int> labels;
  labels.reserve(indices.size());
  for (auto i : indices) labels.push_back(labels_[i]);
  return {features_.select_rows(indices), std::move(labels), num_classes_};
}

ProbMatrix::ProbMatrix(Matrix probs) : probs_(std::move(probs)) {
  for (std::size_t i = 0; i < probs_.rows(); ++i) {
    double sum = 0.0;
    for (double p : probs_.row(i)) {
      if (!(p >= 0.0 && p <= 1.0)) {
        throw ValidationError("row " + std::to_string(i) + ": probability outside [0,1]");
      }
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw ValidationError("row " + std::to_string(i) + ": probabilities sum to " +
                            format_real(sum));
    }
  }
}

LogitDataset parse_logits_csv(std::string_view text) {
  auto table = parse_table(text, "logit");
  auto rows = table.labels.size();
  if (rows == 0) throw ValidationError("dataset must contain at least one sample");
  if (table.num_columns < 2) throw ValidationError("malformed header: need at least two logit columns");
  Matrix logits(rows, table.num_columns, std::move(table.values));
  return {std::move(logits), std::move(table.labels)};
}

InputDataset parse_features_csv(std::string_view text, std::optional<std::size_t> num_classes) {
  auto table = parse_table(text, "x");
  auto rows = table.labels.size();
  if (rows == 0) throw ValidationError("dataset must contain at least one sample");
  Matrix features(rows, table.num_columns, std::move(table.values));
  return {std::move(features), std::move(table.labels), num_classes};
}

std::optional<Manifest> load_manifest(const std::filesystem::path& csv_path) {
  auto path = csv_path;
  path.replace_extension(".json");
  if (path == csv_path || !std::filesystem::exists(path)) return std::nullopt;
  try {
    auto j = nlohmann::json::parse(read_file(path));
    Manifest m;
    m.name = j.value("name", std::string{});
    m.num_classes = j.at("num_classes").get<std::size_t>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed manifest '" + path.string() + "': " + e.what());
  }
}

LogitDataset load_logits_csv(const std::filesystem::path& path) {
  auto dataset = parse_logits_csv(read_file(path));
  if (auto m = load_manifest(path); m && m->num_classes != dataset.num_classes()) {
    throw ValidationError("manifest declares " + std::to_string(m->num_classes) +
                          " classes but the file has " + std::to_string(dataset.num_classes()));
  }
  return dataset;
}

InputDataset load_features_csv(const std::filesystem::path& path) {
  std::optional<std::size_t> k;
  if (auto m = load_manifest(path)) k = m->num_classes;
  return parse_features_csv(read_file(path), k);
}

std::string to_csv(const LogitDataset& dataset) {
  std::ostringstream out;
  write_csv(out, "logit", dataset.num_classes(), dataset.num_samples(),
            [&](std::size_t i) { return dataset.logits().row(i); }, dataset.labels());
  return out.str();
}

std::string to_csv(const InputDataset& dataset) {
  std::ostringstream out;
  write_csv(out, "x", dataset.input_dim(), dataset.num_samples(),
            [&](std::size_t i) { return dataset.features().row(i); }, dataset.labels());
  return out.str();
}

ProbMatrix softmax(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto in = logits.row(i);
    auto dst = out.row(i);
    double max = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t k = 0; k < in.size(); ++k) {
      dst[k] = std::exp(in[k] - max);
      sum += dst[k];
    }
    for (auto& v : dst) v /= sum;
  }
  return {std::move(out), ProbMatrix::Unchecked{}};
}

ProbMatrix softmax(const LogitDataset& dataset) { return softmax(dataset.logits()); }

Prediction predict_row(std::span<const double> probs) {
  Prediction p{0, probs[0]};
  for (std::size_t k = 1; k < probs.size(); ++k) {
    if (probs[k] > p.confidence) p = {static_cast<int>(k), probs[k]};
  }
  return p;
}

std::vector<Prediction> predict(const ProbMatrix& probs) {
  std::vector<Prediction> out;
  out.reserve(probs.num_samples());
  for (std::size_t i = 0; i < probs.num_samples(); ++i) out.push_back(predict_row(probs.row(i)));
  return out;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    std::size_t num_samples, double calib_fraction, std::uint64_t seed) {
  if (!(calib_fraction > 0.0 && calib_fraction < 1.0)) {
    throw ValidationError("calibration fraction must lie in (0,1)");
  }
  auto n_calib = static_cast<std::size_t>(std::floor(static_cast<double>(num_samples) * calib_fraction));
  if (n_calib == 0) throw ValidationError("calibration part empty");
  if (n_calib == num_samples) throw ValidationError("evaluation part empty");

  std::vector<std::size_t> perm(num_samples);
  for (std::size_t i = 0; i < num_samples; ++i) perm[i] = i;
  // Fisher-Yates with raw engine output so the permutation is identical
  // across standard library implementations.
  std::mt19937_64 rng(seed);
  for (std::size_t i = num_samples - 1; i > 0; --i) {
    std::swap(perm[i], perm[rng() % (i + 1)]);
  }
  std::vector<std::size_t> calib(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_calib));
  std::vector<std::size_t> eval(perm.begin() + static_cast<std::ptrdiff_t>(n_calib), perm.end());
  return {std::move(calib), std::move(eval)};
}

}  // namespace clampcal
