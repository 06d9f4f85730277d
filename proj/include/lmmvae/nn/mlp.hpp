#pragma once

#include "lmmvae/nn/matrix.hpp"
#include "lmmvae/nn/rng.hpp"

#include <cmath>
#include <vector>

namespace lmmvae::nn {

enum class Activation { Relu, Identity };

/// Fully connected layer acting on row batches: y = act(x W + b).
/// `weight` is in_dim x out_dim, `bias` is 1 x out_dim.
struct DenseLayer {
  Matrix weight;
  Matrix bias;
  Activation activation = Activation::Identity;

  Index in_dim() const { return weight.rows(); }
  Index out_dim() const { return weight.cols(); }
};

struct MlpParams {
  std::vector<DenseLayer> layers;

  bool empty() const { return layers.empty(); }
  Index input_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
  Index output_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }

  std::vector<Matrix*> tensors() {
    std::vector<Matrix*> out;
    for (auto& l : layers) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
    return out;
  }
};

/// Per-layer inputs and pre-activations kept from a forward pass.
struct MlpCache {
  std::vector<Matrix> inputs;
  std::vector<Matrix> pre_activations;
};

struct MlpGrads {
  std::vector<Matrix> weight;
  std::vector<Matrix> bias;
  Matrix input;

  std::vector<const Matrix*> tensors() const {
    std::vector<const Matrix*> out;
    for (std::size_t i = 0; i < weight.size(); ++i) {
      out.push_back(&weight[i]);
      out.push_back(&bias[i]);
    }
    return out;
  }
};

/// ReLU hidden layers, identity output layer. Weights are Glorot-uniform,
/// biases zero.
inline MlpParams make_mlp(Index in_dim, const std::vector<int>& hidden, Index out_dim, Rng& rng) {
  MlpParams p;
  Index prev = in_dim;
  auto add = [&](Index out, Activation act) {
    DenseLayer l;
    const double limit = std::sqrt(6.0 / static_cast<double>(prev + out));
    l.weight.resize(prev, out);
    for (Index i = 0; i < prev; ++i)
      for (Index j = 0; j < out; ++j) l.weight(i, j) = rng.uniform(-limit, limit);
    l.bias = Matrix::Zero(1, out);
    l.activation = act;
    p.layers.push_back(std::move(l));
    prev = out;
  };
  for (int h : hidden) add(h, Activation::Relu);
  add(out_dim, Activation::Identity);
  return p;
}

namespace detail {
inline void apply_activation(Matrix& m, Activation a) {
  if (a == Activation::Relu) m = m.cwiseMax(0.0);
}
}  // namespace detail

inline Matrix mlp_forward(const MlpParams& params, const Matrix& input, MlpCache* cache = nullptr) {
  if (params.empty()) throw ShapeError("mlp_forward: empty network");
  if (input.cols() != params.input_dim()) {
    throw ShapeError("mlp_forward: input has " + std::to_string(input.cols()) +
                     " columns, network expects " + std::to_string(params.input_dim()));
  }
  if (cache) {
    cache->inputs.clear();
    cache->pre_activations.clear();
  }
  Matrix x = input;
  for (const auto& layer : params.layers) {
    Matrix z = x * layer.weight;
    z.rowwise() += layer.bias.row(0);
    if (cache) {
      cache->inputs.push_back(std::move(x));
      cache->pre_activations.push_back(z);
    }
    detail::apply_activation(z, layer.activation);
    x = std::move(z);
  }
  return x;
}

inline MlpGrads mlp_backward(const MlpParams& params, const MlpCache& cache, const Matrix& output_grad) {
  const std::size_t n_layers = params.layers.size();
  if (cache.inputs.size() != n_layers) throw ShapeError("mlp_backward: cache does not match network");
  const Index rows = cache.inputs.front().rows();
  require_shape(output_grad, rows, params.output_dim(), "mlp_backward output_grad");

  MlpGrads g;
  g.weight.resize(n_layers);
  g.bias.resize(n_layers);
  Matrix delta = output_grad;
  for (std::size_t k = n_layers; k-- > 0;) {
    const auto& layer = params.layers[k];
    if (layer.activation == Activation::Relu) {
      delta = delta.cwiseProduct((cache.pre_activations[k].array() > 0.0).cast<double>().matrix());
    }
    g.weight[k].noalias() = cache.inputs[k].transpose() * delta;
    g.bias[k] = delta.colwise().sum();
    Matrix next = delta * layer.weight.transpose();
    delta = std::move(next);
  }
  g.input = std::move(delta);
  return g;
}

inline MlpGrads mlp_backward(const MlpParams& params, const Matrix& input, const Matrix& output_grad) {
  MlpCache cache;
  mlp_forward(params, input, &cache);
  return mlp_backward(params, cache, output_grad);
}

/// Gradient container with the same shapes as `params`, all zeros.
inline MlpGrads zero_grads(const MlpParams& params) {
  MlpGrads g;
  for (const auto& l : params.layers) {
    g.weight.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
    g.bias.push_back(Matrix::Zero(1, l.bias.cols()));
  }
  return g;
}

inline bool all_finite(const MlpParams& params) {
  for (const auto& l : params.layers)
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  return true;
}

}  // namespace lmmvae::nn
