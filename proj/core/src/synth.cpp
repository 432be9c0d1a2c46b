#include "foci/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "foci/rng.hpp"

namespace foci {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr int kPlacementRounds = 100;   // full-layout redraws before giving up
constexpr int kPlacementAttempts = 200; // per-focus tries within one round

double dist2(double ax, double ay, double bx, double by) {
  return (ax - bx) * (ax - bx) + (ay - by) * (ay - by);
}

}  // namespace

SynthImage generate_image(const SynthConfig& config, std::uint64_t index) {
  config.validate();
  const int size = config.image_size;
  const double max_margin = 1.5 * config.radius_max;
  if (size - max_margin <= max_margin)
    throw std::invalid_argument("image size " + std::to_string(size) +
                                " cannot hold a focus of radius " +
                                std::to_string(config.radius_max));

  // A tight min_spacing can jam rejection sampling for one particular layout
  // even when the constraint is satisfiable, so a jam redraws the whole layout
  // (count, radii, positions) from the next derived stream instead of failing.
  // Everything stays a pure function of (seed, index).
  Rng rng(0);
  std::vector<PlacedBlob> blobs;
  bool layout_ok = false;
  for (int round = 0; round < kPlacementRounds && !layout_ok; ++round) {
    rng = Rng(Rng::mix(Rng::mix(config.seed, index), static_cast<std::uint64_t>(round)));
    blobs.clear();
    layout_ok = true;
    const int count = static_cast<int>(rng.uniform_int(config.count_min, config.count_max));
    for (int i = 0; i < count && layout_ok; ++i) {
      PlacedBlob blob;
      blob.radius = rng.uniform(config.radius_min, config.radius_max);
      blob.intensity = rng.uniform(config.intensity_min, config.intensity_max);
      const double margin = 1.5 * blob.radius;
      const double lo = margin;
      const double hi = size - margin;

      blob.clustered = !blobs.empty() && rng.uniform() < config.cluster_prob;
      bool placed = false;
      for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
        if (blob.clustered) {
          const auto& host = blobs[static_cast<std::size_t>(
              rng.uniform_int(0, static_cast<std::int64_t>(blobs.size()) - 1))];
          blob.cx = std::clamp(host.cx + rng.normal(0, config.cluster_spread), lo, hi);
          blob.cy = std::clamp(host.cy + rng.normal(0, config.cluster_spread), lo, hi);
          placed = true;  // clusters are exempt from the spacing rule by design
        } else {
          blob.cx = rng.uniform(lo, hi);
          blob.cy = rng.uniform(lo, hi);
          placed = true;
          for (const auto& other : blobs)
            if (dist2(blob.cx, blob.cy, other.cx, other.cy) <
                config.min_spacing * config.min_spacing) {
              placed = false;
              break;
            }
        }
      }
      if (!placed) layout_ok = false;
      if (placed) blobs.push_back(blob);
    }
  }
  if (!layout_ok)
    throw std::runtime_error("could not place foci after " + std::to_string(kPlacementRounds) +
                             " layout rounds; min_spacing too tight for the image size");

  std::vector<double> canvas(static_cast<std::size_t>(size) * size, config.background);
  for (const auto& blob : blobs) {
    const double shell = blob.radius * 0.5;
    const double reach = blob.radius + shell;
    const int y0 = std::max(0, static_cast<int>(std::floor(blob.cy - reach)) - 1);
    const int y1 = std::min(size - 1, static_cast<int>(std::ceil(blob.cy + reach)) + 1);
    const int x0 = std::max(0, static_cast<int>(std::floor(blob.cx - reach)) - 1);
    const int x1 = std::min(size - 1, static_cast<int>(std::ceil(blob.cx + reach)) + 1);
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double d = std::sqrt(dist2(x + 0.5, y + 0.5, blob.cx, blob.cy));
        double gain = 0.0;
        if (d <= blob.radius)
          gain = 1.0;
        else if (d <= reach)
          gain = 0.5 * (1.0 + std::cos(kPi * (d - blob.radius) / shell));
        if (gain > 0) canvas[static_cast<std::size_t>(y) * size + x] += blob.intensity * gain;
      }
  }

  SynthImage out;
  out.placement = blobs;
  out.image.width = size;
  out.image.height = size;
  out.image.pixels.resize(canvas.size());
  for (std::size_t i = 0; i < canvas.size(); ++i) {
    double v = canvas[i] + rng.normal(0, config.noise_std);
    v = std::clamp(v, 0.0, 1.0);
    out.image.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }

  for (const auto& blob : blobs) {
    GroundTruth gt;
    gt.box.cx = blob.cx / size;
    gt.box.cy = blob.cy / size;
    gt.box.w = 2.0 * blob.radius / size;
    gt.box.h = 2.0 * blob.radius / size;
    gt.class_id = 0;
    out.boxes.push_back(gt);
  }
  return out;
}

std::string manifest_to_json(const DatasetManifest& manifest) {
  nlohmann::ordered_json j;
  j["format"] = "foci-dataset";
  j["count"] = manifest.count;
  const SynthConfig& c = manifest.config;
  j["synth"] = {{"image_size", c.image_size},
                {"count_min", c.count_min},
                {"count_max", c.count_max},
                {"radius_min", c.radius_min},
                {"radius_max", c.radius_max},
                {"intensity_min", c.intensity_min},
                {"intensity_max", c.intensity_max},
                {"background", c.background},
                {"noise_std", c.noise_std},
                {"cluster_prob", c.cluster_prob},
                {"cluster_spread", c.cluster_spread},
                {"min_spacing", c.min_spacing},
                {"seed", c.seed}};
  j["images"] = manifest.images;
  return j.dump(2) + "\n";
}

DatasetManifest manifest_from_json(const std::string& text, const std::string& origin) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw std::runtime_error(origin + ": invalid manifest JSON: " + e.what());
  }
  DatasetManifest m;
  try {
    m.count = j.at("count").get<int>();
    const auto& s = j.at("synth");
    m.config.image_size = s.at("image_size").get<int>();
    m.config.count_min = s.at("count_min").get<int>();
    m.config.count_max = s.at("count_max").get<int>();
    m.config.radius_min = s.at("radius_min").get<double>();
    m.config.radius_max = s.at("radius_max").get<double>();
    m.config.intensity_min = s.at("intensity_min").get<double>();
    m.config.intensity_max = s.at("intensity_max").get<double>();
    m.config.background = s.at("background").get<double>();
    m.config.noise_std = s.at("noise_std").get<double>();
    m.config.cluster_prob = s.at("cluster_prob").get<double>();
    m.config.cluster_spread = s.at("cluster_spread").get<double>();
    m.config.min_spacing = s.at("min_spacing").get<double>();
    m.config.seed = s.at("seed").get<std::uint64_t>();
    m.images = j.at("images").get<std::vector<std::string>>();
  } catch (const std::exception& e) {
    throw std::runtime_error(origin + ": manifest field error: " + e.what());
  }
  return m;
}

std::string generate_dataset(const SynthConfig& config, int count, const std::string& out_dir) {
  config.validate();
  if (count < 0) throw std::invalid_argument("image count must be >= 0");
  namespace fs = std::filesystem;
  if (!fs::is_directory(out_dir))
    throw std::runtime_error("output directory " + out_dir + " does not exist");

  DatasetManifest manifest;
  manifest.config = config;
  manifest.count = count;

  std::vector<ImageAnnotation> annotations;
  char name[32];
  for (int i = 0; i < count; ++i) {
    std::snprintf(name, sizeof(name), "img_%05d.pgm", i);
    SynthImage synth = generate_image(config, static_cast<std::uint64_t>(i));
    write_pgm((fs::path(out_dir) / name).string(), synth.image);
    annotations.push_back({name, synth.boxes});
    manifest.images.emplace_back(name);
  }

  write_annotations((fs::path(out_dir) / "annotations.jsonl").string(), annotations);
  const std::string manifest_path = (fs::path(out_dir) / "manifest.json").string();
  std::ofstream out(manifest_path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + manifest_path + " for writing");
  const std::string text = manifest_to_json(manifest);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("write failed for " + manifest_path);
  return manifest_path;
}

}  // namespace foci
