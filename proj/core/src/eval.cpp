#include "foci/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>

#include <json.hpp>

namespace foci {

std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold) {
  std::vector<Detection> kept;
  std::vector<const Detection*> order;
  order.reserve(dets.size());
  for (const auto& d : dets) order.push_back(&d);
  std::sort(order.begin(), order.end(), [](const Detection* a, const Detection* b) {
    if (a->score != b->score) return a->score > b->score;
    return a->index < b->index;
  });

  std::vector<bool> suppressed(order.size(), false);
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (suppressed[i]) continue;
    kept.push_back(*order[i]);
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      if (suppressed[j] || order[j]->class_id != order[i]->class_id) continue;
      if (iou(order[i]->box, order[j]->box) > iou_threshold) suppressed[j] = true;
    }
  }
  return kept;  // already in descending-score order
}

std::vector<bool> match_detections(const std::vector<Detection>& dets,
                                   const std::vector<GroundTruth>& gts, double iou_threshold) {
  std::vector<bool> flags(dets.size(), false);
  std::vector<bool> gt_used(gts.size(), false);
  for (std::size_t i = 0; i < dets.size(); ++i) {
    double best = -1.0;
    std::size_t best_gt = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gt_used[g] || gts[g].class_id != dets[i].class_id) continue;
      const double v = iou(dets[i].box, gts[g].box);
      if (v > best) {
        best = v;
        best_gt = g;
      }
    }
    if (best_gt < gts.size() && best >= iou_threshold) {
      flags[i] = true;
      gt_used[best_gt] = true;
    }
  }
  return flags;
}

std::vector<PrPoint> pr_curve(const std::vector<bool>& flags, int n_gt) {
  std::vector<PrPoint> points;
  points.reserve(flags.size());
  int tp = 0;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    if (flags[i]) ++tp;
    PrPoint pt;
    pt.precision = static_cast<double>(tp) / static_cast<double>(i + 1);
    pt.recall = n_gt > 0 ? static_cast<double>(tp) / n_gt : 0.0;
    points.push_back(pt);
  }
  return points;
}

double ap(const std::vector<PrPoint>& points) {
  // Walk the ranked list backwards keeping the running precision maximum;
  // every recall step contributes delta-recall times that envelope value.
  double area = 0.0;
  double envelope = 0.0;
  for (std::size_t i = points.size(); i-- > 0;) {
    envelope = std::max(envelope, points[i].precision);
    const double prev_recall = i > 0 ? points[i - 1].recall : 0.0;
    if (points[i].recall > prev_recall) area += (points[i].recall - prev_recall) * envelope;
  }
  return area;
}

double map_at(const std::vector<ClassReport>& reports) {
  double sum = 0.0;
  int n = 0;
  for (const auto& r : reports)
    if (r.ap.has_value()) {
      sum += *r.ap;
      ++n;
    }
  return n > 0 ? sum / n : 0.0;
}

FociCount count_foci(const std::vector<Detection>& dets, double conf_threshold,
                     const std::string& class_name) {
  std::vector<const Detection*> keep;
  for (const auto& d : dets)
    if (d.score >= conf_threshold) keep.push_back(&d);
  std::sort(keep.begin(), keep.end(), [](const Detection* a, const Detection* b) {
    if (a->score != b->score) return a->score > b->score;
    return a->index < b->index;
  });
  FociCount out;
  out.count = static_cast<int>(keep.size());
  char buf[128];
  for (std::size_t i = 0; i < keep.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%s: %.4f %d", class_name.c_str(), keep[i]->score,
                  static_cast<int>(i + 1));
    out.labels.emplace_back(buf);
  }
  return out;
}

EvalReport evaluate(const std::vector<std::vector<Detection>>& dets_per_image,
                    const GroundTruthSet& gts, double iou_threshold, int num_classes,
                    const std::vector<std::string>& class_names,
                    const std::vector<std::string>& image_names, double count_threshold) {
  if (dets_per_image.size() != gts.num_images())
    throw std::invalid_argument("detection and ground-truth image counts differ");

  EvalReport report;
  report.iou_threshold = iou_threshold;
  report.total_gt = static_cast<int>(gts.total_boxes());

  struct Ranked {
    double score;
    int image;
    int index;
    bool tp;
    int class_id;
  };
  std::vector<Ranked> ranked;

  for (std::size_t img = 0; img < dets_per_image.size(); ++img) {
    std::vector<Detection> sorted = dets_per_image[img];
    std::sort(sorted.begin(), sorted.end(), [](const Detection& a, const Detection& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.index < b.index;
    });
    std::vector<bool> flags = match_detections(sorted, gts.per_image[img], iou_threshold);
    for (std::size_t i = 0; i < sorted.size(); ++i)
      ranked.push_back({sorted[i].score, static_cast<int>(img), sorted[i].index, flags[i],
                        sorted[i].class_id});
  }

  std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.image != b.image) return a.image < b.image;
    return a.index < b.index;
  });

  for (int cls = 0; cls < num_classes; ++cls) {
    ClassReport cr;
    cr.class_id = cls;
    cr.name = cls < static_cast<int>(class_names.size()) ? class_names[cls]
                                                         : "class" + std::to_string(cls);
    for (const auto& img : gts.per_image)
      for (const auto& g : img)
        if (g.class_id == cls) ++cr.n_gt;

    std::vector<bool> flags;
    for (const auto& r : ranked)
      if (r.class_id == cls) flags.push_back(r.tp);
    cr.pr = pr_curve(flags, cr.n_gt);
    if (cr.n_gt > 0) {
      cr.ap = ap(cr.pr);
      cr.max_recall = cr.pr.empty() ? 0.0 : cr.pr.back().recall;
    }
    report.classes.push_back(std::move(cr));
  }

  report.map = map_at(report.classes);
  {
    double sum = 0.0;
    int n = 0;
    for (const auto& c : report.classes)
      if (c.ap.has_value()) {
        sum += c.max_recall;
        ++n;
      }
    report.max_recall = n > 0 ? sum / n : 0.0;
  }

  for (std::size_t img = 0; img < dets_per_image.size(); ++img) {
    ImageCount ic;
    ic.image = img < image_names.size() ? image_names[img] : "image" + std::to_string(img);
    ic.count = count_foci(dets_per_image[img], count_threshold).count;
    report.per_image_counts.push_back(std::move(ic));
  }
  return report;
}

std::string EvalReport::to_json(int indent) const {
  nlohmann::ordered_json j;
  j["iou_threshold"] = iou_threshold;
  j["map"] = map;
  j["max_recall"] = max_recall;
  j["total_gt"] = total_gt;
  j["classes"] = nlohmann::ordered_json::array();
  for (const auto& c : classes) {
    nlohmann::ordered_json jc;
    jc["class"] = c.class_id;
    jc["name"] = c.name;
    jc["n_gt"] = c.n_gt;
    if (c.ap.has_value())
      jc["ap"] = *c.ap;
    else
      jc["ap"] = nullptr;
    jc["max_recall"] = c.max_recall;
    jc["pr"] = nlohmann::ordered_json::array();
    for (const auto& p : c.pr) jc["pr"].push_back({{"recall", p.recall}, {"precision", p.precision}});
    j["classes"].push_back(std::move(jc));
  }
  j["per_image_counts"] = nlohmann::ordered_json::array();
  for (const auto& ic : per_image_counts)
    j["per_image_counts"].push_back({{"image", ic.image}, {"count", ic.count}});
  return j.dump(indent) + "\n";
}

}  // namespace foci
