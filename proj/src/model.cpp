#include "clampcal/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "clampcal/error.hpp"
#include "clampcal/metrics.hpp"

namespace clampcal {
namespace {

using json = nlohmann::json;

std::string layer_name(std::size_t i) { return "layer " + std::to_string(i + 1); }

Activation parse_activation(const std::string& name, std::size_t layer) {
  if (name == "relu") return Activation::relu;
  if (name == "identity") return Activation::identity;
  throw ValidationError(layer_name(layer) + ": unknown activation '" + name + "'");
}

// out = act(in * W^T + b), accumulating each dot product left to right before the bias.
void dense(const Layer& layer, const Matrix& in, Matrix& pre, Matrix& out) {
  const std::size_t n = in.rows();
  pre = Matrix(n, layer.out_dim());
  out = Matrix(n, layer.out_dim());
  for (std::size_t i = 0; i < n; ++i) {
    auto x = in.row(i);
    for (std::size_t o = 0; o < layer.out_dim(); ++o) {
      auto w = layer.weights.row(o);
      double acc = 0.0;
      for (std::size_t j = 0; j < x.size(); ++j) acc += w[j] * x[j];
      acc += layer.bias[o];
      pre(i, o) = acc;
      out(i, o) = layer.activation == Activation::relu ? std::max(acc, 0.0) : acc;
    }
  }
}

void check_forward_args(const MlpModel& model, const Matrix& inputs,
                        std::span<const double> delta, double temperature) {
  if (inputs.cols() != model.input_dim()) {
    throw ValidationError("dimension mismatch: inputs have " + std::to_string(inputs.cols()) +
                          " features, model expects " + std::to_string(model.input_dim()));
  }
  if (delta.size() != model.input_dim()) {
    throw ValidationError("dimension mismatch: delta has " + std::to_string(delta.size()) +
                          " entries, model expects " + std::to_string(model.input_dim()));
  }
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ValidationError("temperature must be positive and finite");
  }
  for (double d : delta) {
    if (!std::isfinite(d)) throw ValidationError("delta must be finite");
  }
}

Matrix perturb(const Matrix& inputs, std::span<const double> delta) {
  Matrix out = inputs;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += delta[j];
  }
  return out;
}

double mean_loss(const Matrix& scaled, std::span<const int> labels, const Loss& loss) {
  double total = 0.0;
  for (std::size_t i = 0; i < scaled.rows(); ++i) total += sample_loss(scaled.row(i), labels[i], loss);
  return total / static_cast<double>(scaled.rows());
}

void check_labels(std::span<const int> labels, std::size_t n, std::size_t k) {
  if (labels.size() != n) {
    throw ValidationError("label count " + std::to_string(labels.size()) +
                          " does not match batch size " + std::to_string(n));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw ValidationError("sample " + std::to_string(i) + ": label " + std::to_string(labels[i]) +
                            " out of range [0," + std::to_string(k) + ")");
    }
  }
}

}  // namespace

MlpModel::MlpModel(std::size_t input_dim, std::size_t output_dim, std::vector<Layer> layers)
    : input_dim_(input_dim), output_dim_(output_dim), layers_(std::move(layers)) {
  if (layers_.empty()) throw ValidationError("model has no layers");
  if (input_dim_ < 1) throw ValidationError("input_dim must be positive");
  if (output_dim_ < 2) throw ValidationError("output_dim must be at least 2");
  std::size_t expected_in = input_dim_;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    if (layer.out_dim() == 0 || layer.in_dim() == 0) {
      throw ValidationError(layer_name(l) + ": empty weight matrix");
    }
    if (layer.in_dim() != expected_in) {
      if (l == 0) {
        throw ValidationError("shape mismatch: input_dim " + std::to_string(input_dim_) +
                              " does not match " + layer_name(l) + " input size " +
                              std::to_string(layer.in_dim()));
      }
      throw ValidationError("shape mismatch between layers " + std::to_string(l) + "→" +
                            std::to_string(l + 1) + ": " + layer_name(l - 1) + " emits " +
                            std::to_string(expected_in) + " values, " + layer_name(l) +
                            " expects " + std::to_string(layer.in_dim()));
    }
    if (layer.bias.size() != layer.out_dim()) {
      throw ValidationError(layer_name(l) + ": bias has " + std::to_string(layer.bias.size()) +
                            " entries, expected " + std::to_string(layer.out_dim()));
    }
    for (double v : layer.weights.values()) {
      if (!std::isfinite(v)) throw ValidationError(layer_name(l) + ": non-finite weight");
    }
    for (double v : layer.bias) {
      if (!std::isfinite(v)) throw ValidationError(layer_name(l) + ": non-finite bias");
    }
    expected_in = layer.out_dim();
  }
  if (expected_in != output_dim_) {
    throw ValidationError("shape mismatch: last layer emits " + std::to_string(expected_in) +
                          " values, output_dim is " + std::to_string(output_dim_));
  }
  if (layers_.back().activation != Activation::identity) {
    throw ValidationError("final layer activation must be identity");
  }
}

MlpModel parse_model_json(std::string_view text) {
  try {
    auto j = json::parse(text);
    std::vector<Layer> layers;
    const auto& jl = j.at("layers");
    if (!jl.is_array()) throw ValidationError("'layers' must be an array");
    for (std::size_t l = 0; l < jl.size(); ++l) {
      const auto& entry = jl[l];
      const auto& jw = entry.at("weights");
      std::size_t rows = jw.size();
      std::size_t cols = rows ? jw[0].size() : 0;
      Matrix w(rows, cols);
      for (std::size_t r = 0; r < rows; ++r) {
        if (jw[r].size() != cols) {
          throw ValidationError(layer_name(l) + ": ragged weight matrix at row " +
                                std::to_string(r + 1));
        }
        for (std::size_t c = 0; c < cols; ++c) w(r, c) = jw[r][c].get<double>();
      }
      Layer layer;
      layer.weights = std::move(w);
      layer.bias = entry.at("bias").get<std::vector<double>>();
      layer.activation = parse_activation(entry.at("activation").get<std::string>(), l);
      layers.push_back(std::move(layer));
    }
    return {j.at("input_dim").get<std::size_t>(), j.at("output_dim").get<std::size_t>(),
            std::move(layers)};
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed model JSON: ") + e.what());
  }
}

MlpModel load_model_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open file '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_model_json(ss.str());
}

std::string to_json(const MlpModel& model) {
  nlohmann::ordered_json j;
  j["input_dim"] = model.input_dim();
  j["output_dim"] = model.output_dim();
  auto layers = nlohmann::ordered_json::array();
  for (const auto& layer : model.layers()) {
    nlohmann::ordered_json jl;
    auto w = nlohmann::ordered_json::array();
    for (std::size_t r = 0; r < layer.weights.rows(); ++r) {
      auto row = layer.weights.row(r);
      w.push_back(std::vector<double>(row.begin(), row.end()));
    }
    jl["weights"] = std::move(w);
    jl["bias"] = layer.bias;
    jl["activation"] = layer.activation == Activation::relu ? "relu" : "identity";
    layers.push_back(std::move(jl));
  }
  j["layers"] = std::move(layers);
  return j.dump();
}

double sample_loss(std::span<const double> scaled, int label, const Loss& loss,
                   std::span<double> grad) {
  const auto y = static_cast<std::size_t>(label);
  double max = *std::max_element(scaled.begin(), scaled.end());
  double sum = 0.0;
  for (double s : scaled) sum += std::exp(s - max);
  const double lse = max + std::log(sum);
  const double log_p = scaled[y] - lse;
  static const double log_clamp = std::log(kLogClamp);
  const bool clamped = log_p < log_clamp;
  const double log_py = clamped ? log_clamp : log_p;

  double value = -log_py;
  // dloss/ds_j = coeff * (p_j - [j == y])
  double coeff = clamped ? 0.0 : 1.0;
  if (loss.kind == Loss::Kind::focal && loss.gamma != 0.0) {
    const double gamma = loss.gamma;
    const double q = -std::expm1(log_py);  // 1 - p_y
    const double p_y = std::exp(log_py);
    value = -std::pow(q, gamma) * log_py;
    if (!clamped) {
      // dloss/dp_y * p_y, negated
      coeff = q > 0.0 ? std::pow(q, gamma) - gamma * std::pow(q, gamma - 1.0) * p_y * log_py : 0.0;
    }
  }
  if (!grad.empty()) {
    for (std::size_t j = 0; j < scaled.size(); ++j) {
      double p_j = std::exp(scaled[j] - lse);
      grad[j] = coeff * (p_j - (j == y ? 1.0 : 0.0));
    }
  }
  return value;
}

ForwardResult forward(const MlpModel& model, const Matrix& inputs, std::span<const double> delta,
                      double temperature) {
  check_forward_args(model, inputs, delta, temperature);
  ForwardResult result;
  auto& t = result.trace;
  t.model_ = &model;
  t.temperature_ = temperature;
  const auto& layers = model.layers();
  t.pre_activations_.resize(layers.size());
  t.activations_.resize(layers.size() + 1);
  t.activations_[0] = perturb(inputs, delta);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    dense(layers[l], t.activations_[l], t.pre_activations_[l], t.activations_[l + 1]);
  }
  const Matrix& raw = t.activations_.back();
  t.scaled_logits_ = Matrix(raw.rows(), raw.cols());
  for (std::size_t i = 0; i < raw.rows(); ++i) {
    for (std::size_t k = 0; k < raw.cols(); ++k) t.scaled_logits_(i, k) = raw(i, k) / temperature;
  }
  result.logits = t.scaled_logits_;
  return result;
}

Matrix evaluate(const MlpModel& model, const Matrix& inputs, std::span<const double> delta,
                double temperature) {
  check_forward_args(model, inputs, delta, temperature);
  Matrix act = perturb(inputs, delta);
  Matrix pre, next;
  for (const auto& layer : model.layers()) {
    dense(layer, act, pre, next);
    act = std::move(next);
  }
  for (std::size_t i = 0; i < act.rows(); ++i) {
    for (auto& v : act.row(i)) v /= temperature;
  }
  return act;
}

Gradients backward(ClampedForwardTrace& trace, std::span<const int> labels, const Loss& loss) {
  if (trace.model_ == nullptr) throw ValidationError("trace is empty");
  if (trace.consumed_) throw ValidationError("trace already consumed by a backward pass");
  trace.consumed_ = true;

  const auto& model = *trace.model_;
  const Matrix& scaled = trace.scaled_logits_;
  const std::size_t n = scaled.rows();
  const std::size_t k = scaled.cols();
  check_labels(labels, n, k);
  const double inv_n = 1.0 / static_cast<double>(n);
  const double t = trace.temperature_;

  Gradients g;
  Matrix upstream(n, k);  // dL/d(raw logits)
  std::vector<double> ds(k);
  double total = 0.0;
  double dt = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total += sample_loss(scaled.row(i), labels[i], loss, ds);
    for (std::size_t c = 0; c < k; ++c) {
      double d = ds[c] * inv_n;
      dt -= d * scaled(i, c);
      upstream(i, c) = d / t;
    }
  }
  g.loss = total * inv_n;
  g.temperature = dt / t;

  const auto& layers = model.layers();
  for (std::size_t l = layers.size(); l-- > 0;) {
    const auto& layer = layers[l];
    const Matrix& pre = trace.pre_activations_[l];
    if (layer.activation == Activation::relu) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t o = 0; o < layer.out_dim(); ++o) {
          if (!(pre(i, o) > 0.0)) upstream(i, o) = 0.0;
        }
      }
    }
    Matrix down(n, layer.in_dim());
    for (std::size_t i = 0; i < n; ++i) {
      auto dst = down.row(i);
      for (std::size_t o = 0; o < layer.out_dim(); ++o) {
        double u = upstream(i, o);
        if (u == 0.0) continue;
        auto w = layer.weights.row(o);
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += u * w[j];
      }
    }
    upstream = std::move(down);
  }

  g.delta.assign(model.input_dim(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = upstream.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) g.delta[j] += r[j];
  }
  trace.pre_activations_.clear();
  trace.activations_.clear();
  return g;
}

double finite_difference_check(const MlpModel& model, const Matrix& inputs,
                               std::span<const int> labels, std::span<const double> delta,
                               double temperature, double step, const Loss& loss) {
  if (!(step > 0.0)) throw ValidationError("step must be positive");
  if (!(temperature > step)) throw ValidationError("temperature must exceed the step");
  auto fwd = forward(model, inputs, delta, temperature);
  auto analytic = backward(fwd.trace, labels, loss);

  auto objective = [&](std::span<const double> d, double t) {
    return mean_loss(evaluate(model, inputs, d, t), labels, loss);
  };
  auto discrepancy = [](double a, double num) {
    double scale = std::max(std::abs(a), std::abs(num));
    double diff = std::abs(a - num);
    return scale < 1e-10 ? diff : diff / scale;
  };

  double worst = 0.0;
  std::vector<double> probe(delta.begin(), delta.end());
  for (std::size_t j = 0; j < probe.size(); ++j) {
    const double saved = probe[j];
    probe[j] = saved + step;
    double up = objective(probe, temperature);
    probe[j] = saved - step;
    double down = objective(probe, temperature);
    probe[j] = saved;
    worst = std::max(worst, discrepancy(analytic.delta[j], (up - down) / (2.0 * step)));
  }
  double up = objective(delta, temperature + step);
  double down = objective(delta, temperature - step);
  worst = std::max(worst, discrepancy(analytic.temperature, (up - down) / (2.0 * step)));
  return worst;
}

}  // namespace clampcal
