#include "clampcal/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "clampcal/error.hpp"

namespace clampcal {
namespace {

using ojson = nlohmann::ordered_json;

struct Candidate {
  double temperature = 0.0;
  double loss = std::numeric_limits<double>::infinity();

  void offer(double t, double value) {
    if (value < loss) *this = {t, value};
  }
};

Matrix divided(const Matrix& logits, double temperature) {
  Matrix out = logits;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    for (auto& v : out.row(i)) v /= temperature;
  }
  return out;
}

void check_temperature(double t) {
  if (!(t > 0.0) || !std::isfinite(t)) throw ValidationError("temperature must be positive and finite");
}

}  // namespace

void TrainConfig::validate() const {
  if (loss.kind == Loss::Kind::focal && !(loss.gamma >= 0.0)) {
    throw ValidationError("focal gamma must be non-negative");
  }
  if (!(lr_delta >= 0.0) || !std::isfinite(lr_delta)) {
    throw ValidationError("lr_delta must be non-negative");
  }
  if (!(lr_temperature >= 0.0) || !std::isfinite(lr_temperature)) {
    throw ValidationError("lr_T must be non-negative");
  }
  if (!(min_temperature > 0.0) || !(max_temperature > min_temperature) ||
      !std::isfinite(max_temperature)) {
    throw ValidationError("temperature bounds must satisfy 0 < T_min < T_max");
  }
  if (!(initial_temperature >= min_temperature && initial_temperature <= max_temperature)) {
    throw ValidationError("T_init must lie in [T_min, T_max]");
  }
}

double temperature_loss(const LogitDataset& data, double temperature, const Loss& loss) {
  check_temperature(temperature);
  const Matrix& logits = data.logits();
  std::vector<double> scaled(logits.cols());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    for (std::size_t k = 0; k < row.size(); ++k) scaled[k] = row[k] / temperature;
    total += sample_loss(scaled, data.labels()[i], loss);
  }
  return total / static_cast<double>(logits.rows());
}

FitReport fit_temperature(const LogitDataset& calib, const TrainConfig& config) {
  config.validate();
  auto f = [&](double t) { return temperature_loss(calib, t, config.loss); };

  FitReport report;
  report.initial_loss = f(config.initial_temperature);
  Candidate best{config.initial_temperature, report.initial_loss};

  double a = config.min_temperature;
  double b = config.max_temperature;
  best.offer(a, f(a));
  best.offer(b, f(b));

  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c);
  double fd = f(d);
  best.offer(c, fc);
  best.offer(d, fd);
  report.loss_curve.push_back(best.loss);

  constexpr double kTolerance = 1e-6;
  while (b - a > kTolerance) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
      best.offer(c, fc);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
      best.offer(d, fd);
    }
    ++report.steps_run;
    report.loss_curve.push_back(best.loss);
  }
  const double mid = 0.5 * (a + b);
  best.offer(mid, f(mid));
  report.loss_curve.back() = best.loss;

  report.calibrator = Calibrator::scaling(best.temperature);
  report.final_loss = best.loss;
  return report;
}

FitReport fit_neural_clamping(const MlpModel& model, const InputDataset& calib,
                              const TrainConfig& config) {
  config.validate();
  if (calib.input_dim() != model.input_dim()) {
    throw ValidationError("dimension mismatch: inputs have " + std::to_string(calib.input_dim()) +
                          " features, model expects " + std::to_string(model.input_dim()));
  }
  if (calib.num_classes() && *calib.num_classes() != model.output_dim()) {
    throw ValidationError("dimension mismatch: dataset declares " +
                          std::to_string(*calib.num_classes()) + " classes, model emits " +
                          std::to_string(model.output_dim()));
  }
  calib.check_labels(model.output_dim());

  std::vector<double> delta(model.input_dim(), 0.0);
  double temperature = config.initial_temperature;

  FitReport report;
  std::vector<double> best_delta = delta;
  double best_temperature = temperature;
  double best_loss = std::numeric_limits<double>::infinity();

  for (std::size_t step = 0;; ++step) {
    auto fwd = forward(model, calib.features(), delta, temperature);
    auto grads = backward(fwd.trace, calib.labels(), config.loss);
    if (!std::isfinite(grads.loss)) {
      throw ValidationError("non-finite loss encountered at step " + std::to_string(step));
    }
    report.loss_curve.push_back(grads.loss);
    if (step == 0) report.initial_loss = grads.loss;
    if (grads.loss < best_loss) {
      best_loss = grads.loss;
      best_delta = delta;
      best_temperature = temperature;
    }
    if (step == config.steps) break;

    for (std::size_t j = 0; j < delta.size(); ++j) delta[j] -= config.lr_delta * grads.delta[j];
    temperature = std::clamp(temperature - config.lr_temperature * grads.temperature,
                             config.min_temperature, config.max_temperature);
    for (double v : delta) {
      if (!std::isfinite(v)) {
        throw ValidationError("non-finite perturbation encountered at step " + std::to_string(step));
      }
    }
    report.steps_run = step + 1;
  }

  report.calibrator = Calibrator::clamping(std::move(best_delta), best_temperature);
  report.final_loss = best_loss;
  return report;
}

ProbMatrix apply(const Calibrator& calibrator, const LogitDataset& data) {
  switch (calibrator.kind) {
    case Calibrator::Kind::none:
      return softmax(data.logits());
    case Calibrator::Kind::temperature:
      check_temperature(calibrator.temperature);
      return softmax(divided(data.logits(), calibrator.temperature));
    case Calibrator::Kind::neural_clamping:
      break;
  }
  throw ValidationError("neural_clamping calibrator requires a model and input features");
}

ProbMatrix apply(const Calibrator& calibrator, const MlpModel& model, const InputDataset& data) {
  if (data.input_dim() != model.input_dim()) {
    throw ValidationError("dimension mismatch: inputs have " + std::to_string(data.input_dim()) +
                          " features, model expects " + std::to_string(model.input_dim()));
  }
  const std::vector<double> zero(model.input_dim(), 0.0);
  switch (calibrator.kind) {
    case Calibrator::Kind::none:
      return softmax(evaluate(model, data.features(), zero, 1.0));
    case Calibrator::Kind::temperature:
      return softmax(evaluate(model, data.features(), zero, calibrator.temperature));
    case Calibrator::Kind::neural_clamping:
      return softmax(evaluate(model, data.features(), calibrator.delta, calibrator.temperature));
  }
  throw ValidationError("unknown calibrator kind");
}

std::string to_json(const Calibrator& calibrator) {
  ojson j;
  switch (calibrator.kind) {
    case Calibrator::Kind::none:
      j["kind"] = "none";
      break;
    case Calibrator::Kind::temperature:
      j["kind"] = "temperature";
      j["T"] = calibrator.temperature;
      break;
    case Calibrator::Kind::neural_clamping:
      j["kind"] = "neural_clamping";
      j["T"] = calibrator.temperature;
      j["delta"] = calibrator.delta;
      break;
  }
  return j.dump();
}

Calibrator parse_calibrator_json(std::string_view text) {
  try {
    auto j = nlohmann::json::parse(text);
    auto kind = j.at("kind").get<std::string>();
    if (kind == "none") return Calibrator::identity();
    double t = j.at("T").get<double>();
    check_temperature(t);
    if (kind == "temperature") return Calibrator::scaling(t);
    if (kind == "neural_clamping") {
      auto delta = j.at("delta").get<std::vector<double>>();
      for (double v : delta) {
        if (!std::isfinite(v)) throw ValidationError("delta must be finite");
      }
      return Calibrator::clamping(std::move(delta), t);
    }
    throw ValidationError("unknown calibrator kind '" + kind + "'");
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed calibrator JSON: ") + e.what());
  }
}

std::string to_json(const FitReport& report) {
  ojson j;
  j["calibrator"] = ojson::parse(to_json(report.calibrator));
  j["initial_loss"] = report.initial_loss;
  j["final_loss"] = report.final_loss;
  j["steps_run"] = report.steps_run;
  j["loss_curve"] = report.loss_curve;
  return j.dump();
}

TrainConfig parse_train_config(std::string_view json_text) {
  TrainConfig c;
  if (json_text.find_first_not_of(" \t\r\n") == std::string_view::npos) return c;
  try {
    auto j = nlohmann::json::parse(json_text);
    if (!j.is_object()) throw ValidationError("config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
      if (key == "loss") {
        auto name = value.get<std::string>();
        if (name == "cross_entropy") {
          c.loss.kind = Loss::Kind::cross_entropy;
        } else if (name == "focal") {
          c.loss.kind = Loss::Kind::focal;
        } else {
          throw ValidationError("unknown loss '" + name + "'");
        }
      } else if (key == "gamma") {
        c.loss.gamma = value.get<double>();
      } else if (key == "steps") {
        auto steps = value.get<long long>();
        if (steps < 0) throw ValidationError("steps must be non-negative");
        c.steps = static_cast<std::size_t>(steps);
      } else if (key == "lr_delta") {
        c.lr_delta = value.get<double>();
      } else if (key == "lr_T") {
        c.lr_temperature = value.get<double>();
      } else if (key == "T_init") {
        c.initial_temperature = value.get<double>();
      } else if (key == "seed") {
        c.seed = value.get<std::uint64_t>();
      } else if (key == "T_min") {
        c.min_temperature = value.get<double>();
      } else if (key == "T_max") {
        c.max_temperature = value.get<double>();
      } else {
        throw ValidationError("unknown config key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed config: ") + e.what());
  }
  if (c.loss.kind == Loss::Kind::cross_entropy) c.loss.gamma = 0.0;
  c.validate();
  return c;
}

}  // namespace clampcal
