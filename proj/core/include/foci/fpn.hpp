#pragma once

#include <array>
#include <string>
#include <vector>

#include "foci/layers.hpp"

namespace foci {

// Feature pyramid over the four tapped maps. Lateral 1x1 convs bring each tap
// to the pyramid width F, the top-down path upsamples and adds, and each level
// gets a 3x3 smoothing conv. fuse_pyramid then average-pools every level to
// the head grid, concatenates them fine-to-coarse (4F channels) and projects
// with a 1x1 conv to the head input width.
template <typename T>
struct FPNParams {
  std::array<ConvLayer<T>, 4> lateral;  // tap channels -> F, fine-to-coarse
  std::array<ConvLayer<T>, 4> smooth;   // F -> F
  ConvLayer<T> fusion;                  // 4F -> head channels
  int width = 0;

  static FPNParams build(const std::array<int, 4>& tap_channels, int fpn_width, int head_channels,
                         Rng& rng) {
    if (fpn_width < 1) throw std::invalid_argument("fpn width must be >= 1");
    if (head_channels < 1) throw std::invalid_argument("head channel count must be >= 1");
    FPNParams p;
    p.width = fpn_width;
    for (int i = 0; i < 4; ++i) {
      if (tap_channels[i] < 1) throw std::invalid_argument("tap channel counts must be >= 1");
      p.lateral[i] = ConvLayer<T>::build(ConvSpec::same(1, 1, tap_channels[i], fpn_width), rng);
      p.smooth[i] = ConvLayer<T>::build(ConvSpec::same(3, 1, fpn_width, fpn_width), rng);
    }
    p.fusion = ConvLayer<T>::build(ConvSpec::same(1, 1, 4 * fpn_width, head_channels), rng);
    return p;
  }

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) {
    for (int i = 0; i < 4; ++i) {
      const std::string level = prefix + ".p" + std::to_string(i + 2);
      lateral[i].collect(level + ".lateral", out);
      smooth[i].collect(level + ".smooth", out);
    }
    fusion.collect(prefix + ".fusion", out);
  }
};

// taps are fine-to-coarse (C2..C5) with strictly halving spatial extents.
template <typename T>
std::array<Tensor<T>, 4> build_pyramid(GradientTape<T>* tape, const std::array<Tensor<T>, 4>& taps,
                                       const FPNParams<T>& params) {
  for (int i = 1; i < 4; ++i) {
    const Shape4 prev = taps[i - 1].shape();
    const Shape4 cur = taps[i].shape();
    if (cur.h * 2 != prev.h || cur.w * 2 != prev.w)
      throw std::invalid_argument("tap chain must halve spatial extents: tap " + std::to_string(i) +
                                  " is " + cur.str() + " after " + prev.str());
  }

  std::array<Tensor<T>, 4> pyramid;
  pyramid[3] = params.smooth[3].forward(tape, params.lateral[3].forward(tape, taps[3]));
  for (int i = 2; i >= 0; --i) {
    Tensor<T> lat = params.lateral[i].forward(tape, taps[i]);
    Tensor<T> merged = add(tape, lat, upsample_nearest2(tape, pyramid[i + 1]));
    pyramid[i] = params.smooth[i].forward(tape, merged);
  }
  return pyramid;
}

template <typename T>
Tensor<T> fuse_pyramid(GradientTape<T>* tape, const std::array<Tensor<T>, 4>& pyramid,
                       const FPNParams<T>& params, int target_grid) {
  std::vector<Tensor<T>> pooled;
  pooled.reserve(4);
  for (const auto& level : pyramid)
    pooled.push_back(avgpool_to(tape, level, target_grid, target_grid));
  Tensor<T> cat = concat_channels(tape, pooled);
  return params.fusion.forward(tape, cat);
}

}  // namespace foci
