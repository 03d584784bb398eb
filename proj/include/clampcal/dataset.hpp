#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "clampcal/matrix.hpp"

namespace clampcal {

// N x K raw classifier outputs with ground-truth labels in [0, K).
class LogitDataset {
 public:
  // Validates N >= 1, K >= 2, finite logits and label range; throws ValidationError.
  LogitDataset(Matrix logits, std::vector<int> labels);

  std::size_t num_samples() const { return logits_.rows(); }
  std::size_t num_classes() const { return logits_.cols(); }
  const Matrix& logits() const { return logits_; }
  const std::vector<int>& labels() const { return labels_; }

  LogitDataset subset(std::span<const std::size_t> indices) const;

 private:
  Matrix logits_;
  std::vector<int> labels_;
};

// N x D_in feature vectors with labels. The class count is only known when a
// manifest supplies it or a model is paired with the data.
class InputDataset {
 public:
  InputDataset(Matrix features, std::vector<int> labels,
               std::optional<std::size_t> num_classes = std::nullopt);

  std::size_t num_samples() const { return features_.rows(); }
  std::size_t input_dim() const { return features_.cols(); }
  std::optional<std::size_t> num_classes() const { return num_classes_; }
  const Matrix& features() const { return features_; }
  const std::vector<int>& labels() const { return labels_; }

  // Throws ValidationError if any label is outside [0, num_classes).
  void check_labels(std::size_t num_classes) const;

  InputDataset subset(std::span<const std::size_t> indices) const;

 private:
  Matrix features_;
  std::vector<int> labels_;
  std::optional<std::size_t> num_classes_;
};

// Row-stochastic N x K matrix: entries in [0,1], rows sum to 1 within 1e-9.
class ProbMatrix {
 public:
  ProbMatrix() = default;
  // Validating constructor; throws ValidationError.
  explicit ProbMatrix(Matrix probs);

  std::size_t num_samples() const { return probs_.rows(); }
  std::size_t num_classes() const { return probs_.cols(); }
  std::span<const double> row(std::size_t i) const { return probs_.row(i); }
  double operator()(std::size_t i, std::size_t k) const { return probs_(i, k); }
  const Matrix& matrix() const { return probs_; }

  friend bool operator==(const ProbMatrix&, const ProbMatrix&) = default;

 private:
  struct Unchecked {};
  ProbMatrix(Matrix probs, Unchecked) : probs_(std::move(probs)) {}
  friend ProbMatrix softmax(const Matrix& logits);

  Matrix probs_;
};

struct Prediction {
  int predicted_class = 0;
  double confidence = 0.0;
};

struct Manifest {
  std::string name;
  std::size_t num_classes = 0;
};

// CSV with header `logit_0,...,logit_{K-1},label`.
LogitDataset parse_logits_csv(std::string_view text);
// CSV with header `x_0,...,x_{D-1},label`.
InputDataset parse_features_csv(std::string_view text,
                                std::optional<std::size_t> num_classes = std::nullopt);

// File loaders. A manifest at the same path with a `.json` extension is
// honoured when present; its num_classes must agree with the data.
LogitDataset load_logits_csv(const std::filesystem::path& path);
InputDataset load_features_csv(const std::filesystem::path& path);
std::optional<Manifest> load_manifest(const std::filesystem::path& csv_path);

// Values are written with 17 significant digits so reloading is bit-exact.
std::string to_csv(const LogitDataset& dataset);
std::string to_csv(const InputDataset& dataset);

// Row-wise softmax with max subtraction.
ProbMatrix softmax(const Matrix& logits);
ProbMatrix softmax(const LogitDataset& dataset);

// Top-1 class and its probability; ties go to the lowest class index.
Prediction predict_row(std::span<const double> probs);
std::vector<Prediction> predict(const ProbMatrix& probs);

// Deterministic seeded partition into (calibration, evaluation) parts.
// The calibration part holds floor(N * calib_fraction) samples.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    std::size_t num_samples, double calib_fraction, std::uint64_t seed);

template <typename Dataset>
std::pair<Dataset, Dataset> split(const Dataset& dataset, double calib_fraction,
                                  std::uint64_t seed) {
  auto [calib, eval] = split_indices(dataset.num_samples(), calib_fraction, seed);
  return {dataset.subset(calib), dataset.subset(eval)};
}

// Formats a double with 17 significant digits.
std::string format_real(double value);

}  // namespace clampcal
