#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace foci {

// Axis-aligned box in normalized image coordinates (center + extents).
struct BBox {
  double cx = 0, cy = 0, w = 0, h = 0;

  double x_min() const { return cx - w / 2; }
  double x_max() const { return cx + w / 2; }
  double y_min() const { return cy - h / 2; }
  double y_max() const { return cy + h / 2; }
  double area() const { return w * h; }

  bool valid() const { return w > 0 && h > 0 && cx >= 0 && cx <= 1 && cy >= 0 && cy <= 1; }
  bool operator==(const BBox&) const = default;
};

struct Detection {
  BBox box;
  int class_id = 0;
  double score = 0;  // confidence in [0, 1]
  int index = 0;     // unique per image, dense from 1, descending score
};

struct GroundTruth {
  BBox box;
  int class_id = 0;
};

// Per-image annotated boxes.
struct GroundTruthSet {
  std::vector<std::vector<GroundTruth>> per_image;

  std::size_t num_images() const { return per_image.size(); }
  std::size_t total_boxes() const {
    std::size_t n = 0;
    for (const auto& img : per_image) n += img.size();
    return n;
  }
};

// Intersection over union; 0 for disjoint boxes.
double iou(const BBox& a, const BBox& b);

// IoU of two shapes placed at a common center (anchor matching).
double shape_iou(double w1, double h1, double w2, double h2);

}  // namespace foci
