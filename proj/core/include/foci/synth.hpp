#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "foci/annotations.hpp"
#include "foci/boxes.hpp"
#include "foci/config.hpp"
#include "foci/image.hpp"

namespace foci {

// One rendered focus: pixel-space center, core radius, peak intensity.
struct PlacedBlob {
  double cx = 0;
  double cy = 0;
  double radius = 0;
  double intensity = 0;
  bool clustered = false;
};

struct SynthImage {
  ImageU8 image;
  std::vector<GroundTruth> boxes;   // normalized, tight squares over the cores
  std::vector<PlacedBlob> placement;  // generator log, used by property tests
};

// Renders one synthetic foci image, fully determined by (config.seed, index).
// Each focus is a disk of its core radius at peak intensity with a cosine
// falloff shell of width radius/2; additive Gaussian noise; clamped and
// quantized to 8 bits. The ground-truth box is the tight bounding square of
// the core (side 2*radius).
SynthImage generate_image(const SynthConfig& config, std::uint64_t index);

struct DatasetManifest {
  SynthConfig config;
  int count = 0;
  std::vector<std::string> images;
};

std::string manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const std::string& text,
                                   const std::string& origin = "<memory>");

// Writes count images (img_00000.pgm ...), annotations.jsonl, and
// manifest.json into out_dir (which must exist). Returns the manifest path.
// Regeneration with the same config produces bit-identical files.
std::string generate_dataset(const SynthConfig& config, int count, const std::string& out_dir);

}  // namespace foci
