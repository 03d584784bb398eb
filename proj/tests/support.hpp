#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "clampcal/dataset.hpp"
#include "clampcal/matrix.hpp"

namespace testing {

inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(CLAMPCAL_FIXTURE_DIR) / name;
}

inline clampcal::Matrix matrix(const std::vector<std::vector<double>>& rows) {
  clampcal::Matrix m(rows.size(), rows.empty() ? 0 : rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  }
  return m;
}

inline std::vector<std::vector<double>> rows_of(const clampcal::Matrix& m) {
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    out.emplace_back(r.begin(), r.end());
  }
  return out;
}

// Logits [[0,ln9],[0,ln9],[ln1.5,0],[0,ln4]] with labels [1,0,0,1]: top-label
// confidences [0.9,0.9,0.6,0.8], correctness [1,0,1,1].
inline clampcal::LogitDataset four_sample() {
  return {matrix({{0, std::log(9.0)}, {0, std::log(9.0)}, {std::log(1.5), 0}, {0, std::log(4.0)}}),
          {1, 0, 0, 1}};
}

// Three samples with logits [2,0] and labels [0,0,1].
inline clampcal::LogitDataset three_sample() {
  return {matrix({{2, 0}, {2, 0}, {2, 0}}), {0, 0, 1}};
}

}  // namespace testing

#include <random>

#include "clampcal/model.hpp"

namespace testing {

// Random ReLU network D_in -> hidden... -> K with the given seed.
inline clampcal::MlpModel random_model(std::mt19937_64& rng, std::size_t d_in, std::size_t k,
                                       std::vector<std::size_t> hidden) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<clampcal::Layer> layers;
  std::size_t in = d_in;
  hidden.push_back(k);
  for (std::size_t l = 0; l < hidden.size(); ++l) {
    clampcal::Layer layer;
    layer.weights = clampcal::Matrix(hidden[l], in);
    for (std::size_t r = 0; r < hidden[l]; ++r) {
      for (std::size_t c = 0; c < in; ++c) layer.weights(r, c) = g(rng) / std::sqrt(static_cast<double>(in));
    }
    layer.bias.resize(hidden[l]);
    for (auto& b : layer.bias) b = 0.5 * g(rng);
    layer.activation = l + 1 == hidden.size() ? clampcal::Activation::identity : clampcal::Activation::relu;
    layers.push_back(std::move(layer));
    in = hidden[l];
  }
  return {d_in, k, std::move(layers)};
}

inline clampcal::Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols,
                                      double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  clampcal::Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (auto& v : m.row(i)) v = g(rng);
  }
  return m;
}

inline clampcal::MlpModel identity_model() {
  clampcal::Layer layer;
  layer.weights = matrix({{1, 0}, {0, 1}});
  layer.bias = {0, 0};
  layer.activation = clampcal::Activation::identity;
  return {2, 2, {layer}};
}

}  // namespace testing
