#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <vector>

#include "foci/config.hpp"
#include "foci/layers.hpp"

namespace foci {

// One backbone stage: same-size convs, optionally exporting its output as a
// tap and/or followed by a 2x2 max-pool. Stages 1-4 are tapped and pooled;
// stage 5 keeps its resolution (its pool is the removed one) and stage 6 adds
// the trailing 1x1 conv that brings the trunk to 19 conv layers.
struct BackboneStagePlan {
  std::vector<ConvSpec> convs;
  bool tapped = false;
  bool pool_after = false;
};

inline std::vector<BackboneStagePlan> backbone_plan(const NetworkConfig& cfg) {
  cfg.validate();
  const auto& w = cfg.stage_widths;
  auto c3 = [](int in, int out) { return ConvSpec::same(3, 1, in, out); };
  auto c1 = [](int in, int out) { return ConvSpec::same(1, 1, in, out); };

  std::vector<BackboneStagePlan> plan(6);
  plan[0] = {{c3(cfg.in_channels, w[0])}, true, true};
  plan[1] = {{c3(w[0], w[1])}, true, true};
  plan[2] = {{c3(w[1], w[2]), c1(w[2], w[1]), c3(w[1], w[2])}, true, true};
  plan[3] = {{c3(w[2], w[3]), c1(w[3], w[2]), c3(w[2], w[3])}, true, true};
  plan[4] = {{c3(w[3], w[4]), c1(w[4], w[3]), c3(w[3], w[4]), c1(w[4], w[3]), c3(w[3], w[4])},
             false,
             false};
  plan[5] = {{c3(w[4], w[5]), c1(w[5], w[4]), c3(w[4], w[5]), c1(w[5], w[4]), c3(w[4], w[5]),
              c1(w[5], w[5])},
             false,
             false};
  return plan;
}

struct BackboneTrace {
  std::array<Shape4, 4> taps;
  Shape4 final_map;
  int conv_layers = 0;
  int pool_layers = 0;
};

// Pure shape arithmetic over the plan; no tensors are allocated.
inline BackboneTrace backbone_trace(const NetworkConfig& cfg, int batch = 1) {
  BackboneTrace trace;
  Shape4 s{batch, cfg.in_channels, cfg.input_resolution, cfg.input_resolution};
  std::size_t tap = 0;
  for (const auto& stage : backbone_plan(cfg)) {
    for (const auto& conv : stage.convs) {
      s = Shape4{s.n, conv.out_channels, conv.out_extent(s.h), conv.out_extent(s.w)};
      ++trace.conv_layers;
    }
    if (stage.tapped) trace.taps[tap++] = s;
    if (stage.pool_after) {
      s = Shape4{s.n, s.c, s.h / 2, s.w / 2};
      ++trace.pool_layers;
    }
  }
  trace.final_map = s;
  return trace;
}

template <typename T>
struct Backbone {
  NetworkConfig config;
  std::vector<BackboneStagePlan> plan;
  std::vector<ConvBnLayer<T>> layers;  // flattened across stages, execution order

  std::size_t trainable_parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers)
      n += l.weight.shape().numel() + l.bias.shape().numel() + l.gamma.shape().numel() +
           l.beta.shape().numel();
    return n;
  }

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "%s.conv%02zu", prefix.c_str(), i + 1);
      layers[i].collect(name, out);
    }
  }
};

template <typename T>
Backbone<T> build_backbone(const NetworkConfig& cfg, std::uint64_t seed) {
  Backbone<T> net;
  net.config = cfg;
  net.plan = backbone_plan(cfg);
  Rng rng(seed);
  for (const auto& stage : net.plan)
    for (const auto& conv : stage.convs) net.layers.push_back(ConvBnLayer<T>::build(conv, rng));
  return net;
}

template <typename T>
struct BackboneOut {
  std::array<Tensor<T>, 4> taps;
  Tensor<T> final_map;
};

// Runs the trunk. `training` selects the batch-norm path (batch statistics and
// running-average updates vs. frozen running statistics).
template <typename T>
BackboneOut<T> backbone_forward(Backbone<T>& net, const Tensor<T>& image, GradientTape<T>* tape,
                                bool training) {
  const Shape4 s = image.shape();
  if (s.h != net.config.input_resolution || s.w != net.config.input_resolution ||
      s.c != net.config.in_channels)
    throw std::invalid_argument("backbone input shaped " + s.str() + ", config expects (N," +
                                std::to_string(net.config.in_channels) + "," +
                                std::to_string(net.config.input_resolution) + "," +
                                std::to_string(net.config.input_resolution) + ")");

  const T eps = static_cast<T>(net.config.bn_eps);
  const T momentum = static_cast<T>(net.config.bn_momentum);
  const T slope = static_cast<T>(net.config.leaky_slope);

  BackboneOut<T> out;
  Tensor<T> x = image;
  std::size_t layer = 0;
  std::size_t tap = 0;
  for (const auto& stage : net.plan) {
    for (std::size_t i = 0; i < stage.convs.size(); ++i)
      x = net.layers[layer++].forward(tape, x, eps, momentum, slope, training);
    if (stage.tapped) out.taps[tap++] = x;
    if (stage.pool_after) x = maxpool2(tape, x);
  }
  out.final_map = x;
  return out;
}

}  // namespace foci
