#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "clampcal/matrix.hpp"

namespace clampcal {

enum class Activation { relu, identity };

struct Layer {
  Matrix weights;  // out x in
  std::vector<double> bias;
  Activation activation = Activation::identity;

  std::size_t in_dim() const { return weights.cols(); }
  std::size_t out_dim() const { return weights.rows(); }
};

// Frozen feedforward network emitting logits. Immutable after construction.
class MlpModel {
 public:
  // Checks dimension chaining, finiteness and an identity final layer.
  MlpModel(std::size_t input_dim, std::size_t output_dim, std::vector<Layer> layers);

  std::size_t input_dim() const { return input_dim_; }
  std::size_t output_dim() const { return output_dim_; }
  const std::vector<Layer>& layers() const { return layers_; }

 private:
  std::size_t input_dim_;
  std::size_t output_dim_;
  std::vector<Layer> layers_;
};

MlpModel parse_model_json(std::string_view text);
MlpModel load_model_json(const std::filesystem::path& path);
std::string to_json(const MlpModel& model);

struct Loss {
  enum class Kind { cross_entropy, focal };
  Kind kind = Kind::cross_entropy;
  double gamma = 0.0;

  static Loss cross_entropy() { return {}; }
  static Loss focal(double gamma) { return {Kind::focal, gamma}; }
};

// Per-sample loss of logits `scaled` (already divided by T), with log p clamped
// below at log(1e-12). Writes dloss/dscaled into `grad` when it is non-empty.
double sample_loss(std::span<const double> scaled, int label, const Loss& loss,
                   std::span<double> grad = {});

struct ForwardResult;

struct Gradients {
  std::vector<double> delta;  // summed over the batch
  double temperature = 0.0;
  double loss = 0.0;  // mean over the batch
};

// Activations of one forward pass through f(x + delta) / T, kept for a single
// backward pass. Holds a pointer to the model, which must outlive the trace.
class ClampedForwardTrace {
 public:
  const Matrix& logits() const { return scaled_logits_; }
  const Matrix& raw_logits() const { return activations_.back(); }
  const Matrix& perturbed_inputs() const { return activations_.front(); }
  double temperature() const { return temperature_; }
  bool consumed() const { return consumed_; }

 private:
  friend ForwardResult forward(const MlpModel&, const Matrix&, std::span<const double>,
                                double);
  friend Gradients backward(ClampedForwardTrace&, std::span<const int>, const Loss&);

  const MlpModel* model_ = nullptr;
  std::vector<Matrix> pre_activations_;  // one per layer
  std::vector<Matrix> activations_;      // input + one per layer
  Matrix scaled_logits_;
  double temperature_ = 1.0;
  bool consumed_ = false;
};

struct ForwardResult {
  Matrix logits;  // f(x_i + delta) / T
  ClampedForwardTrace trace;
};

// Throws ValidationError on dimension mismatch, non-positive T or non-finite delta.
ForwardResult forward(const MlpModel& model, const Matrix& inputs, std::span<const double> delta,
                      double temperature);

// f(x_i + delta) / T without retaining a trace.
Matrix evaluate(const MlpModel& model, const Matrix& inputs, std::span<const double> delta,
                double temperature);

// Exact gradients of the mean batch loss with respect to delta and T. Weights
// are constants. Consumes the trace; a second call throws ValidationError.
Gradients backward(ClampedForwardTrace& trace, std::span<const int> labels, const Loss& loss);

// Largest discrepancy between backward() and central differences over every
// coordinate of delta and T. Relative error |a-n|/max(|a|,|n|), or absolute
// error where both magnitudes are below 1e-10.
double finite_difference_check(const MlpModel& model, const Matrix& inputs,
                               std::span<const int> labels, std::span<const double> delta,
                               double temperature, double step,
                               const Loss& loss = Loss::cross_entropy());

}  // namespace clampcal
