#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <stdexcept>
#include <vector>

#include "foci/backbone.hpp"
#include "foci/config.hpp"
#include "foci/rng.hpp"
#include "oracles.hpp"

using foci::Backbone;
using foci::backbone_plan;
using foci::backbone_trace;
using foci::BackboneTrace;
using foci::build_backbone;
using foci::NetworkConfig;
using foci::Rng;
using foci::Shape4;
using foci::Tensor;

TEST_CASE("plan counts 19 convolutions and 4 pools across 6 stages") {
  auto cfg = foci::desk_preset().network;
  auto plan = backbone_plan(cfg);
  REQUIRE(plan.size() == 6);

  const std::vector<std::size_t> convs_per_stage = {1, 1, 3, 3, 5, 6};
  int convs = 0, pools = 0, taps = 0;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    CHECK(plan[i].convs.size() == convs_per_stage[i]);
    convs += static_cast<int>(plan[i].convs.size());
    pools += plan[i].pool_after ? 1 : 0;
    taps += plan[i].tapped ? 1 : 0;
    CHECK(plan[i].tapped == plan[i].pool_after);  // taps sit exactly at the pooled stages
  }
  CHECK(convs == 19);
  CHECK(pools == 4);
  CHECK(taps == 4);
  CHECK(plan[4].tapped == false);
  CHECK(plan[5].tapped == false);

  // 3x3 / 1x1 alternation inside the deeper stages, all same-padded stride 1.
  for (const auto& stage : plan)
    for (std::size_t i = 0; i < stage.convs.size(); ++i) {
      const auto& c = stage.convs[i];
      CHECK(c.stride == 1);
      CHECK(c.dilation == 1);
      CHECK(c.out_extent(64) == 64);
      CHECK((c.kernel == 3 || c.kernel == 1));
    }
}

TEST_CASE("shape trace at full working resolution") {
  auto cfg = foci::paper_preset().network;
  BackboneTrace t = backbone_trace(cfg);
  CHECK(t.conv_layers == 19);
  CHECK(t.pool_layers == 4);
  CHECK(t.taps[0] == Shape4{1, 32, 512, 512});
  CHECK(t.taps[1] == Shape4{1, 64, 256, 256});
  CHECK(t.taps[2] == Shape4{1, 128, 128, 128});
  CHECK(t.taps[3] == Shape4{1, 256, 64, 64});
  CHECK(t.final_map == Shape4{1, 1024, 32, 32});
}

TEST_CASE("shape trace at desk resolution, including batched") {
  auto cfg = foci::desk_preset().network;
  BackboneTrace t = backbone_trace(cfg);
  CHECK(t.taps[0] == Shape4{1, 4, 64, 64});
  CHECK(t.taps[1] == Shape4{1, 8, 32, 32});
  CHECK(t.taps[2] == Shape4{1, 16, 16, 16});
  CHECK(t.taps[3] == Shape4{1, 32, 8, 8});
  CHECK(t.final_map == Shape4{1, 128, 4, 4});

  BackboneTrace b = backbone_trace(cfg, 3);
  CHECK(b.taps[0].n == 3);
  CHECK(b.final_map == Shape4{3, 128, 4, 4});
}

TEST_CASE("trainable parameter count at full width") {
  auto cfg = foci::paper_preset().network;
  auto net = build_backbone<double>(cfg, 0);

  // Independent count: out*in*k*k weights plus bias, gamma, beta per conv.
  std::size_t want = 0;
  for (const auto& stage : backbone_plan(cfg))
    for (const auto& c : stage.convs)
      want += static_cast<std::size_t>(c.out_channels) * c.in_channels * c.kernel * c.kernel +
              3 * static_cast<std::size_t>(c.out_channels);

  CHECK(net.trainable_parameter_count() == want);
  CHECK(net.trainable_parameter_count() == 20875648u);
}

TEST_CASE("same seed builds bit-identical weights, different seeds differ") {
  auto cfg = foci::desk_preset().network;
  auto a = build_backbone<double>(cfg, 42);
  auto b = build_backbone<double>(cfg, 42);
  auto c = build_backbone<double>(cfg, 43);
  REQUIRE(a.layers.size() == 19);
  REQUIRE(b.layers.size() == 19);
  bool any_differs = false;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    CHECK(a.layers[i].weight.values() == b.layers[i].weight.values());
    if (a.layers[i].weight.values() != c.layers[i].weight.values()) any_differs = true;
  }
  CHECK(any_differs);
}

TEST_CASE("forward output shapes agree with the trace") {
  auto cfg = foci::desk_preset().network;
  auto net = build_backbone<double>(cfg, 1);
  Rng rng(31);
  auto image = oracle::random_tensor<double>(rng, {2, 1, 64, 64}, 0.0, 1.0);
  auto out = foci::backbone_forward<double>(net, image, nullptr, false);
  BackboneTrace t = backbone_trace(cfg, 2);
  for (int i = 0; i < 4; ++i) CHECK(out.taps[static_cast<std::size_t>(i)].shape() == t.taps[static_cast<std::size_t>(i)]);
  CHECK(out.final_map.shape() == t.final_map);
}

TEST_CASE("zeroed trunk with beta offsets emits the offset at every tap") {
  auto cfg = foci::desk_preset().network;
  auto net = build_backbone<double>(cfg, 5);
  for (auto& layer : net.layers) {
    for (auto& v : layer.weight.values()) v = 0.0;
    for (auto& v : layer.bias.values()) v = 0.0;
    for (auto& v : layer.beta.values()) v = 0.3;
  }
  // Inference mode: fresh running stats are mean 0 / var 1, so conv output 0
  // normalizes to 0 and each activation is exactly beta.
  Tensor<double> image(1, 1, 64, 64);
  auto out = foci::backbone_forward<double>(net, image, nullptr, false);
  for (const auto& tap : out.taps)
    for (double v : tap.values()) CHECK(v == 0.3);
  for (double v : out.final_map.values()) CHECK(v == 0.3);
}

TEST_CASE("forward rejects mis-sized input") {
  auto cfg = foci::desk_preset().network;
  auto net = build_backbone<double>(cfg, 1);
  Tensor<double> small(1, 1, 32, 32);
  CHECK_THROWS_AS(foci::backbone_forward<double>(net, small, nullptr, false), std::invalid_argument);
  Tensor<double> channels(1, 2, 64, 64);
  CHECK_THROWS_AS(foci::backbone_forward<double>(net, channels, nullptr, false), std::invalid_argument);
}

TEST_CASE("collect names layers in execution order") {
  auto cfg = foci::desk_preset().network;
  auto net = build_backbone<double>(cfg, 1);
  std::vector<foci::NamedTensor<double>> named;
  net.collect("backbone", named);
  REQUIRE(named.size() == 19 * 6);
  CHECK(named[0].name == "backbone.conv01.weight");
  CHECK(named[1].name == "backbone.conv01.bias");
  CHECK(named[6].name == "backbone.conv02.weight");
  CHECK(named.back().name == "backbone.conv19.bn.running_var");
  CHECK(named.back().trainable == false);
}
