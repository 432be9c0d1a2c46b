#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "foci/autograd.hpp"
#include "foci/ops.hpp"
#include "foci/rng.hpp"
#include "foci/tensor.hpp"

namespace foci {

// A parameter or persistent buffer, addressable by name for checkpointing.
// Trainable tensors receive gradients and optimizer state; non-trainable ones
// (batch-norm running stats, anchor priors) are saved/loaded but never stepped.
template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
  bool trainable = true;
};

// Fan-in-scaled normal init (He): std = sqrt(2 / fan_in).
template <typename T>
Tensor<T> he_normal(Rng& rng, const Shape4& shape, int fan_in) {
  if (fan_in < 1) throw std::invalid_argument("he_normal fan_in must be >= 1");
  Tensor<T> t(shape);
  const double std_dev = std::sqrt(2.0 / fan_in);
  T* d = t.data();
  for (std::size_t i = 0; i < shape.numel(); ++i) d[i] = static_cast<T>(rng.normal() * std_dev);
  t.set_requires_grad(true);
  return t;
}

// Plain convolution layer: weight + bias, no normalization.
template <typename T>
struct ConvLayer {
  ConvSpec spec;
  Tensor<T> weight;
  Tensor<T> bias;

  static ConvLayer build(const ConvSpec& spec, Rng& rng) {
    ConvLayer layer;
    layer.spec = spec;
    const int fan_in = spec.kernel * spec.kernel * spec.in_channels;
    layer.weight = he_normal<T>(rng, {spec.out_channels, spec.in_channels, spec.kernel, spec.kernel},
                                fan_in);
    layer.bias = Tensor<T>::full({1, spec.out_channels, 1, 1}, T(0));
    layer.bias.set_requires_grad(true);
    return layer;
  }

  Tensor<T> forward(GradientTape<T>* tape, const Tensor<T>& x) const {
    return conv2d(tape, x, weight, bias, spec);
  }

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) {
    out.push_back({prefix + ".weight", weight, true});
    out.push_back({prefix + ".bias", bias, true});
  }
};

// Convolution + batch-norm + leaky-ReLU block, the backbone's repeating unit.
template <typename T>
struct ConvBnLayer {
  ConvSpec spec;
  Tensor<T> weight;
  Tensor<T> bias;
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;

  static ConvBnLayer build(const ConvSpec& spec, Rng& rng) {
    ConvBnLayer layer;
    layer.spec = spec;
    const int fan_in = spec.kernel * spec.kernel * spec.in_channels;
    layer.weight = he_normal<T>(rng, {spec.out_channels, spec.in_channels, spec.kernel, spec.kernel},
                                fan_in);
    layer.bias = Tensor<T>::full({1, spec.out_channels, 1, 1}, T(0));
    layer.bias.set_requires_grad(true);
    layer.gamma = Tensor<T>::full({1, spec.out_channels, 1, 1}, T(1));
    layer.gamma.set_requires_grad(true);
    layer.beta = Tensor<T>::full({1, spec.out_channels, 1, 1}, T(0));
    layer.beta.set_requires_grad(true);
    layer.running_mean = Tensor<T>::full({1, spec.out_channels, 1, 1}, T(0));
    layer.running_var = Tensor<T>::full({1, spec.out_channels, 1, 1}, T(1));
    return layer;
  }

  Tensor<T> forward(GradientTape<T>* tape, const Tensor<T>& x, T eps, T momentum, T slope,
                    bool training) {
    Tensor<T> y = conv2d(tape, x, weight, bias, spec);
    y = batchnorm(tape, y, gamma, beta, running_mean, running_var, eps, momentum, training);
    return leaky_relu(tape, y, slope);
  }

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) {
    out.push_back({prefix + ".weight", weight, true});
    out.push_back({prefix + ".bias", bias, true});
    out.push_back({prefix + ".bn.gamma", gamma, true});
    out.push_back({prefix + ".bn.beta", beta, true});
    out.push_back({prefix + ".bn.running_mean", running_mean, false});
    out.push_back({prefix + ".bn.running_var", running_var, false});
  }
};

}  // namespace foci
