#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace foci {

// Prior box shape in grid-cell units.
struct AnchorShape {
  double w = 1.0, h = 1.0;
  bool operator==(const AnchorShape&) const = default;
};

// Full architecture description. The stage structure (19 conv layers in six
// stages, four 2x2 max-pools between the first five stages) is fixed; the
// config chooses input resolution, channel widths, pyramid width and the
// detection-head vocabulary.
struct NetworkConfig {
  std::string preset = "desk";
  int input_resolution = 64;
  int in_channels = 1;
  // Base width per stage; the standard progression doubles each stage.
  std::vector<int> stage_widths = {4, 8, 16, 32, 64, 128};
  int fpn_width = 16;
  int head_channels = 64;
  std::vector<AnchorShape> anchors;
  int num_classes = 1;
  std::vector<std::string> class_names = {"Cell"};
  double leaky_slope = 0.1;  // activation slope; Darknet convention, config-overridable
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;

  static constexpr int kNumPools = 4;

  int head_grid() const { return input_resolution / (1 << kNumPools); }

  void validate() const {
    if (input_resolution < (1 << kNumPools) || input_resolution % (1 << kNumPools) != 0)
      throw std::invalid_argument("input resolution " + std::to_string(input_resolution) +
                                  " must be a positive multiple of " +
                                  std::to_string(1 << kNumPools));
    if (stage_widths.size() != 6)
      throw std::invalid_argument("expected 6 stage widths, got " +
                                  std::to_string(stage_widths.size()));
    for (int w : stage_widths)
      if (w < 1) throw std::invalid_argument("stage widths must be >= 1");
    if (fpn_width < 1) throw std::invalid_argument("fpn width must be >= 1");
    if (head_channels < 1) throw std::invalid_argument("head channels must be >= 1");
    if (anchors.empty()) throw std::invalid_argument("anchor set must not be empty");
    for (const auto& a : anchors)
      if (a.w <= 0 || a.h <= 0) throw std::invalid_argument("anchor shapes must be positive");
    if (num_classes < 1) throw std::invalid_argument("class count must be >= 1");
    if (leaky_slope < 0 || leaky_slope >= 1)
      throw std::invalid_argument("leaky slope must satisfy 0 <= alpha < 1");
  }
};

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 8;
  int epochs = 40;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 1;
  int checkpoint_every = 0;  // epochs; 0 disables
  double lambda_coord = 5.0;
  double lambda_noobj = 0.5;

  void validate() const {
    if (learning_rate <= 0) throw std::invalid_argument("learning rate must be positive");
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
    if (epochs < 0) throw std::invalid_argument("epoch count must be >= 0");
    if (beta1 <= 0 || beta1 >= 1 || beta2 <= 0 || beta2 >= 1)
      throw std::invalid_argument("Adam betas must lie in (0, 1)");
    if (epsilon <= 0) throw std::invalid_argument("Adam epsilon must be positive");
  }
};

// Synthetic foci image generator parameters. Pixel units unless noted.
struct SynthConfig {
  int image_size = 64;
  int count_min = 2;
  int count_max = 5;
  double radius_min = 3.0;
  double radius_max = 6.0;
  double intensity_min = 0.55;
  double intensity_max = 1.0;
  double background = 0.12;
  double noise_std = 0.04;
  double cluster_prob = 0.0;
  double cluster_spread = 6.0;
  double min_spacing = 18.0;  // non-cluster placements only
  std::uint64_t seed = 7;

  void validate() const {
    if (image_size < 8) throw std::invalid_argument("image size must be >= 8");
    if (count_min < 0 || count_max < count_min)
      throw std::invalid_argument("focus count range invalid");
    if (radius_min <= 0 || radius_max < radius_min)
      throw std::invalid_argument("radius range invalid");
    if (intensity_max < intensity_min) throw std::invalid_argument("intensity range invalid");
    if (noise_std < 0) throw std::invalid_argument("noise std must be >= 0");
    if (cluster_prob < 0 || cluster_prob > 1)
      throw std::invalid_argument("cluster probability must lie in [0, 1]");
  }
};

struct EvalConfig {
  double iou_threshold = 0.25;
  double nms_threshold = 0.45;
  double conf_threshold = 0.25;

  void validate() const {
    for (double t : {iou_threshold, nms_threshold, conf_threshold})
      if (t < 0 || t > 1) throw std::invalid_argument("eval thresholds must lie in [0, 1]");
  }
};

struct PipelineConfig {
  NetworkConfig network;
  TrainConfig train;
  SynthConfig synth;
  EvalConfig eval;

  void validate() const {
    network.validate();
    train.validate();
    synth.validate();
    eval.validate();
  }
};

// Built-in presets. "desk" is sized to train on one CPU core in minutes;
// "paper" is the full-resolution configuration (512 input, 32x32 grid).
PipelineConfig desk_preset();
PipelineConfig paper_preset();
PipelineConfig preset_by_name(const std::string& name);

// Flat `key = value` config file with [section] headers and '#' comments.
// Unknown sections or keys are errors naming the offending line.
PipelineConfig load_pipeline_config(const std::string& path);
PipelineConfig parse_pipeline_config(const std::string& text, const std::string& origin);

std::string anchors_to_string(const std::vector<AnchorShape>& anchors);
std::vector<AnchorShape> parse_anchors(const std::string& text);

}  // namespace foci
