#pragma once

#include "qlae/autodiff.hpp"
#include "qlae/rng.hpp"
#include "qlae/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace qlae {

/// Fully-connected network. Hidden layers use leaky ReLU; the final layer is
/// linear (it emits either the pre-quantized latent or the pixel logits).
template <class T>
struct DenseNet {
  std::vector<int> dims;  // input, hidden..., output
  T slope = T(0.3);
  std::vector<Var<T>> weights;  // layer l: dims[l] x dims[l+1]
  std::vector<Var<T>> biases;   // layer l: dims[l+1]

  int input_dim() const { return dims.front(); }
  int output_dim() const { return dims.back(); }
  std::size_t layer_count() const { return weights.size(); }
};

/// Variance-scaling initialization: entries of layer l are drawn from
/// N(0, gain / fan_in) with gain 2 / (1 + slope^2) for layers feeding an
/// activation and 1 for the linear output layer. Biases start at zero.
template <class T>
DenseNet<T> init_dense(std::vector<int> dims, T slope, RngStream& rng) {
  if (dims.size() < 2) throw std::invalid_argument("init_dense: need at least input and output dims");
  DenseNet<T> net;
  net.dims = std::move(dims);
  net.slope = slope;
  for (std::size_t l = 0; l + 1 < net.dims.size(); ++l) {
    const std::size_t fan_in = static_cast<std::size_t>(net.dims[l]);
    const std::size_t fan_out = static_cast<std::size_t>(net.dims[l + 1]);
    const bool has_activation = l + 2 < net.dims.size();
    const T gain = has_activation ? T(2) / (T(1) + slope * slope) : T(1);
    const T stddev = std::sqrt(gain / static_cast<T>(fan_in));
    Tensor<T> w({fan_in, fan_out});
    for (std::size_t i = 0; i < w.numel(); ++i) w[i] = stddev * rng.normal<T>();
    net.weights.push_back(parameter(std::move(w)));
    net.biases.push_back(parameter(Tensor<T>({fan_out})));
  }
  return net;
}

/// x: batch x input_dim -> batch x output_dim.
template <class T>
Var<T> dense_forward(const DenseNet<T>& net, Var<T> x) {
  if (x->value.cols() != static_cast<std::size_t>(net.input_dim())) {
    throw std::invalid_argument("dense_forward: input width " + std::to_string(x->value.cols()) +
                                " does not match network input dim " +
                                std::to_string(net.input_dim()));
  }
  Var<T> h = std::move(x);
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    h = add_rowvec(matmul(h, net.weights[l]), net.biases[l]);
    if (l + 1 < net.layer_count()) h = leaky_relu(h, net.slope);
  }
  return h;
}

}  // namespace qlae
