#pragma once

#include <optional>
#include <string>
#include <vector>

#include "foci/boxes.hpp"

namespace foci {

struct PrPoint {
  double recall = 0;
  double precision = 0;
};

struct ClassReport {
  int class_id = 0;
  std::string name;
  int n_gt = 0;
  std::vector<PrPoint> pr;
  std::optional<double> ap;  // absent when the class has no ground truth
  double max_recall = 0;
};

struct ImageCount {
  std::string image;
  int count = 0;
};

struct EvalReport {
  double iou_threshold = 0;
  std::vector<ClassReport> classes;
  double map = 0;         // mean over classes with defined AP
  double max_recall = 0;  // mean of final recalls over the same classes
  int total_gt = 0;
  std::vector<ImageCount> per_image_counts;

  std::string to_json(int indent = 2) const;
};

// Greedy per-class non-maximum suppression. Ties in score break toward the
// lower detection index; the result is re-sorted by descending score and
// ties again by lower index.
std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold);

// Greedy TP/FP flags for one image. Detections must arrive sorted by
// descending score; each GT matches at most one detection.
std::vector<bool> match_detections(const std::vector<Detection>& dets,
                                   const std::vector<GroundTruth>& gts, double iou_threshold);

// Cumulative precision/recall per rank for a flag sequence.
std::vector<PrPoint> pr_curve(const std::vector<bool>& flags, int n_gt);

// Area under the precision envelope (all-point interpolation).
double ap(const std::vector<PrPoint>& points);

// Arithmetic mean over classes whose AP is defined.
double map_at(const std::vector<ClassReport>& reports);

struct FociCount {
  int count = 0;
  std::vector<std::string> labels;  // "<class>: <score:4 decimals> <index>"
};

// Count detections above the threshold and label them 1..n by descending
// score, matching the on-image annotation format.
FociCount count_foci(const std::vector<Detection>& dets, double conf_threshold,
                     const std::string& class_name = "Cell");

// One scored detection with its image of origin, for dataset-level ranking.
struct RankedDetection {
  int image = 0;
  Detection det;
};

// Full evaluation: per image NMS has already been applied by the caller;
// this ranks detections across the dataset per class, computes PR/AP and
// assembles the report.
EvalReport evaluate(const std::vector<std::vector<Detection>>& dets_per_image,
                    const GroundTruthSet& gts, double iou_threshold, int num_classes,
                    const std::vector<std::string>& class_names,
                    const std::vector<std::string>& image_names, double count_threshold);

}  // namespace foci
