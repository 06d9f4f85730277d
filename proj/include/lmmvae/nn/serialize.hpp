#pragma once

// JSON layout for parameters:
//   matrix: {"rows": R, "cols": C, "data": [row-major R*C values]}
//   mlp:    {"layers": [{"activation": "relu"|"identity", "weight": matrix(in x out),
//                        "bias": matrix(1 x out)}, ...]}

#include "lmmvae/nn/matrix.hpp"
#include "lmmvae/nn/mlp.hpp"

#include <nlohmann/json.hpp>

#include <stdexcept>
#include <string>
#include <vector>

namespace lmmvae::nn {

using json = nlohmann::json;

inline json matrix_to_json(const Matrix& m) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

inline Matrix matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<Index>();
  const auto cols = j.at("cols").get<Index>();
  const auto& data = j.at("data");
  if (rows < 0 || cols < 0 || static_cast<Index>(data.size()) != rows * cols) {
    throw ShapeError("matrix_from_json: data length does not match " + shape_str(rows, cols));
  }
  Matrix m(rows, cols);
  std::size_t k = 0;
  for (Index i = 0; i < rows; ++i)
    for (Index jj = 0; jj < cols; ++jj) m(i, jj) = data[k++].get<double>();
  return m;
}

inline json mlp_to_json(const MlpParams& p) {
  json layers = json::array();
  for (const auto& l : p.layers) {
    layers.push_back({{"activation", l.activation == Activation::Relu ? "relu" : "identity"},
                      {"weight", matrix_to_json(l.weight)},
                      {"bias", matrix_to_json(l.bias)}});
  }
  return json{{"layers", std::move(layers)}};
}

inline MlpParams mlp_from_json(const json& j) {
  MlpParams p;
  for (const auto& lj : j.at("layers")) {
    DenseLayer l;
    const auto act = lj.at("activation").get<std::string>();
    if (act == "relu") {
      l.activation = Activation::Relu;
    } else if (act == "identity") {
      l.activation = Activation::Identity;
    } else {
      throw std::invalid_argument("mlp_from_json: unknown activation '" + act + "'");
    }
    l.weight = matrix_from_json(lj.at("weight"));
    l.bias = matrix_from_json(lj.at("bias"));
    require_shape(l.bias, 1, l.weight.cols(), "mlp_from_json bias");
    if (!p.layers.empty() && p.layers.back().out_dim() != l.in_dim()) {
      throw ShapeError("mlp_from_json: consecutive layer dimensions do not chain");
    }
    p.layers.push_back(std::move(l));
  }
  return p;
}

}  // namespace lmmvae::nn
