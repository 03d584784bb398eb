#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "clampcal/dataset.hpp"
#include "clampcal/model.hpp"

namespace clampcal {

struct Calibrator {
  enum class Kind { none, temperature, neural_clamping };
  Kind kind = Kind::none;
  double temperature = 1.0;    // unused for Kind::none
  std::vector<double> delta;   // Kind::neural_clamping only

  static Calibrator identity() { return {}; }
  static Calibrator scaling(double t) { return {Kind::temperature, t, {}}; }
  static Calibrator clamping(std::vector<double> delta, double t) {
    return {Kind::neural_clamping, t, std::move(delta)};
  }

  friend bool operator==(const Calibrator&, const Calibrator&) = default;
};

struct TrainConfig {
  Loss loss = Loss::cross_entropy();
  std::size_t steps = 1000;
  double lr_delta = 0.01;
  double lr_temperature = 0.01;
  double initial_temperature = 1.0;
  std::uint64_t seed = 0;
  double min_temperature = 0.05;
  double max_temperature = 20.0;

  // Throws ValidationError on out-of-domain values.
  void validate() const;
};

struct FitReport {
  Calibrator calibrator;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> loss_curve;
  std::size_t steps_run = 0;
};

// Mean training loss of softmax(logits / T).
double temperature_loss(const LogitDataset& data, double temperature, const Loss& loss);

// Golden-section search for T on [min_temperature, max_temperature] to a
// bracket width of 1e-6. The curve records the best loss seen after each
// iteration. Endpoints and T_init are also evaluated and the best wins.
FitReport fit_temperature(const LogitDataset& calib, const TrainConfig& config = {});

// Full-batch gradient descent on (delta, T) from (0, T_init), weights frozen.
// Returns the iterate with the lowest loss; the curve holds the loss at
// iterates 0..steps.
FitReport fit_neural_clamping(const MlpModel& model, const InputDataset& calib,
                              const TrainConfig& config = {});

ProbMatrix apply(const Calibrator& calibrator, const LogitDataset& data);
ProbMatrix apply(const Calibrator& calibrator, const MlpModel& model, const InputDataset& data);

std::string to_json(const Calibrator& calibrator);
Calibrator parse_calibrator_json(std::string_view text);
std::string to_json(const FitReport& report);
// Reads the JSON keys of TrainConfig (loss, gamma, steps, lr_delta, lr_T,
// T_init, seed, T_min, T_max); absent keys keep their defaults.
TrainConfig parse_train_config(std::string_view json_text);

}  // namespace clampcal
