#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "foci/backbone.hpp"
#include "foci/config.hpp"
#include "foci/fpn.hpp"
#include "foci/head.hpp"
#include "foci/sac.hpp"

namespace foci {

// The full detector: backbone trunk, one SAC block per tap, FPN over the SAC
// outputs, and the prediction head on the fused map.
template <typename T>
struct Network {
  NetworkConfig config;
  Backbone<T> backbone;
  std::array<SACParams<T>, 4> sac;
  FPNParams<T> fpn;
  HeadParams<T> head;
  // Anchor priors as a persistent tensor (1,1,B,2) with (w,h) pairs, so a
  // weights file fully determines the decode geometry.
  Tensor<T> anchor_store;

  AnchorSet anchors() const {
    const Shape4 s = anchor_store.shape();
    AnchorSet set;
    for (int b = 0; b < s.h; ++b)
      set.push_back({double(anchor_store.at(0, 0, b, 0)), double(anchor_store.at(0, 0, b, 1))});
    return set;
  }

  // Every named tensor, parameters and persistent buffers alike, in a fixed
  // deterministic order. This order defines the weights-file layout.
  std::vector<NamedTensor<T>> named_tensors() {
    std::vector<NamedTensor<T>> out;
    backbone.collect("backbone", out);
    for (int i = 0; i < 4; ++i) sac[i].collect("sac.c" + std::to_string(i + 2), out);
    fpn.collect("fpn", out);
    head.collect("head", out);
    out.push_back({"head.anchors", anchor_store, false});
    return out;
  }

  std::vector<NamedTensor<T>> trainable_tensors() {
    std::vector<NamedTensor<T>> out;
    for (auto& t : named_tensors())
      if (t.trainable) out.push_back(t);
    return out;
  }

  std::size_t trainable_parameter_count() {
    std::size_t n = 0;
    for (auto& t : trainable_tensors()) n += t.tensor.shape().numel();
    return n;
  }

  // Rebuilds config.anchors from the anchor tensor after a weights load.
  void sync_anchors_from_store() {
    config.anchors.clear();
    const Shape4 s = anchor_store.shape();
    for (int b = 0; b < s.h; ++b)
      config.anchors.push_back(
          {double(anchor_store.at(0, 0, b, 0)), double(anchor_store.at(0, 0, b, 1))});
    config.validate();
  }
};

template <typename T>
Network<T> build_network(const NetworkConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Network<T> net;
  net.config = cfg;
  net.backbone = build_backbone<T>(cfg, Rng::mix(seed, 1));

  const BackboneTrace trace = backbone_trace(cfg);
  std::array<int, 4> tap_channels{};
  for (int i = 0; i < 4; ++i) {
    Rng rng(Rng::mix(seed, 2 + i));
    net.sac[i] = SACParams<T>::build(trace.taps[i].c, rng);
    tap_channels[i] = trace.taps[i].c;
  }
  {
    Rng rng(Rng::mix(seed, 6));
    net.fpn = FPNParams<T>::build(tap_channels, cfg.fpn_width, cfg.head_channels, rng);
  }
  {
    Rng rng(Rng::mix(seed, 7));
    net.head = HeadParams<T>::build(cfg.head_channels, static_cast<int>(cfg.anchors.size()),
                                    cfg.num_classes, rng);
  }
  net.anchor_store = Tensor<T>(Shape4{1, 1, static_cast<int>(cfg.anchors.size()), 2});
  for (std::size_t b = 0; b < cfg.anchors.size(); ++b) {
    net.anchor_store.at(0, 0, static_cast<int>(b), 0) = static_cast<T>(cfg.anchors[b].w);
    net.anchor_store.at(0, 0, static_cast<int>(b), 1) = static_cast<T>(cfg.anchors[b].h);
  }
  return net;
}

// Full forward pass to the raw prediction tensor.
template <typename T>
Tensor<T> network_forward(Network<T>& net, const Tensor<T>& images, GradientTape<T>* tape,
                          bool training) {
  BackboneOut<T> trunk = backbone_forward(net.backbone, images, tape, training);
  std::array<Tensor<T>, 4> taps;
  for (int i = 0; i < 4; ++i) taps[i] = sac_forward(tape, trunk.taps[i], net.sac[i]);
  std::array<Tensor<T>, 4> pyramid = build_pyramid(tape, taps, net.fpn);
  Tensor<T> fused = fuse_pyramid(tape, pyramid, net.fpn, net.config.head_grid());
  return head_forward(tape, fused, net.head);
}

}  // namespace foci
