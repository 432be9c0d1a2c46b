#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "foci/layers.hpp"

namespace foci {

// Effective extent of a dilated kernel: k + (k-1)(d-1).
inline int receptive_field(const ConvSpec& spec) {
  return spec.kernel + (spec.kernel - 1) * (spec.dilation - 1);
}

// Switchable atrous convolution: two parallel same-size atrous branches whose
// outputs are blended per pixel by a learned switch. Branch A is 3x3 dilation
// 1; branch B is 5x5 dilation 2 (receptive field 9). The switch is a 1x1 conv
// over the input producing one channel, squashed by a sigmoid and broadcast
// across the output channels:
//   y = S * A(x) + (1 - S) * B(x),  S = sigmoid(switch(x)).
template <typename T>
struct SACParams {
  ConvLayer<T> branch_a;
  ConvLayer<T> branch_b;
  ConvLayer<T> switch_conv;

  static SACParams build(int channels, Rng& rng) {
    if (channels < 1) throw std::invalid_argument("sac channel count must be >= 1");
    SACParams p;
    p.branch_a = ConvLayer<T>::build(ConvSpec::same(3, 1, channels, channels), rng);
    p.branch_b = ConvLayer<T>::build(ConvSpec::same(5, 2, channels, channels), rng);
    p.switch_conv = ConvLayer<T>::build(ConvSpec::same(1, 1, channels, 1), rng);
    return p;
  }

  int channels() const { return branch_a.spec.in_channels; }

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) {
    branch_a.collect(prefix + ".branch_a", out);
    branch_b.collect(prefix + ".branch_b", out);
    switch_conv.collect(prefix + ".switch", out);
  }
};

template <typename T>
Tensor<T> sac_forward(GradientTape<T>* tape, const Tensor<T>& x, const SACParams<T>& params) {
  if (x.shape().c != params.channels())
    throw std::invalid_argument("sac input has " + std::to_string(x.shape().c) +
                                " channels, params expect " +
                                std::to_string(params.channels()));
  Tensor<T> a = params.branch_a.forward(tape, x);
  Tensor<T> b = params.branch_b.forward(tape, x);
  Tensor<T> s = sigmoid(tape, params.switch_conv.forward(tape, x));  // (N,1,H,W)
  // S*a + (1-S)*b
  Tensor<T> sa = broadcast_mul(tape, s, a);
  Tensor<T> one_minus_s = scale_shift(tape, s, T(-1), T(1));
  Tensor<T> sb = broadcast_mul(tape, one_minus_s, b);
  return add(tape, sa, sb);
}

}  // namespace foci
