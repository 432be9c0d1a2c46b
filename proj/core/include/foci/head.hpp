#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "foci/boxes.hpp"
#include "foci/config.hpp"
#include "foci/layers.hpp"

namespace foci {

// Prior box shapes in grid-cell units.
using AnchorSet = std::vector<AnchorShape>;

inline void validate_anchors(const AnchorSet& anchors) {
  if (anchors.empty()) throw std::invalid_argument("anchor set must not be empty");
  for (const auto& a : anchors)
    if (a.w <= 0 || a.h <= 0) throw std::invalid_argument("anchor shapes must be positive");
}

// Prediction head: one 1x1 convolution from the fused map to B*(5+C)
// channels, raw (activations are applied by decode and the loss). Per-anchor
// channel layout: t_x, t_y, t_w, t_h, t_o, then C class logits.
template <typename T>
struct HeadParams {
  ConvLayer<T> conv;
  int num_anchors = 0;
  int num_classes = 0;

  static HeadParams build(int in_channels, int num_anchors, int num_classes, Rng& rng) {
    if (num_anchors < 1) throw std::invalid_argument("head needs at least one anchor");
    if (num_classes < 1) throw std::invalid_argument("head needs at least one class");
    HeadParams p;
    p.num_anchors = num_anchors;
    p.num_classes = num_classes;
    p.conv =
        ConvLayer<T>::build(ConvSpec::same(1, 1, in_channels, num_anchors * (5 + num_classes)), rng);
    return p;
  }

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) {
    conv.collect(prefix + ".conv", out);
  }
};

template <typename T>
Tensor<T> head_forward(GradientTape<T>* tape, const Tensor<T>& fused, const HeadParams<T>& params) {
  return params.conv.forward(tape, fused);
}

namespace detail {

inline double sigmoid_value(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double logit(double p) {
  const double eps = 1e-12;
  p = std::min(std::max(p, eps), 1.0 - eps);
  return std::log(p / (1.0 - p));
}

}  // namespace detail

// Decodes one raw prediction tensor into per-image detection lists.
// For cell (cx,cy) and anchor (pw,ph):
//   b_x = (sigmoid(t_x) + cx) / G      b_w = pw * exp(t_w) / G
//   b_y = (sigmoid(t_y) + cy) / G      b_h = ph * exp(t_h) / G
// confidence = sigmoid(t_o) * max class probability (softmax; identically 1
// for C=1). Detections below the threshold are dropped; survivors are indexed
// 1..n in descending-score order.
template <typename T>
std::vector<std::vector<Detection>> decode(const Tensor<T>& raw, const AnchorSet& anchors,
                                           int num_classes, double conf_threshold) {
  validate_anchors(anchors);
  const Shape4 s = raw.shape();
  const int B = static_cast<int>(anchors.size());
  const int C = num_classes;
  if (s.c != B * (5 + C))
    throw std::invalid_argument("raw prediction has " + std::to_string(s.c) + " channels, want " +
                                std::to_string(B * (5 + C)));
  if (s.h != s.w) throw std::invalid_argument("head grid must be square, got " + s.str());
  const int G = s.h;

  std::vector<std::vector<Detection>> out(s.n);
  std::vector<double> probs(C);
  for (int n = 0; n < s.n; ++n) {
    std::vector<Detection> dets;
    for (int gy = 0; gy < G; ++gy)
      for (int gx = 0; gx < G; ++gx)
        for (int b = 0; b < B; ++b) {
          const int base = b * (5 + C);
          const double tx = raw.at(n, base + 0, gy, gx);
          const double ty = raw.at(n, base + 1, gy, gx);
          const double tw = raw.at(n, base + 2, gy, gx);
          const double th = raw.at(n, base + 3, gy, gx);
          const double to = raw.at(n, base + 4, gy, gx);

          double class_prob = 1.0;
          int class_id = 0;
          if (C > 1) {
            double mx = raw.at(n, base + 5, gy, gx);
            for (int c = 1; c < C; ++c) mx = std::max(mx, double(raw.at(n, base + 5 + c, gy, gx)));
            double denom = 0.0;
            for (int c = 0; c < C; ++c) {
              probs[c] = std::exp(double(raw.at(n, base + 5 + c, gy, gx)) - mx);
              denom += probs[c];
            }
            class_prob = 0.0;
            for (int c = 0; c < C; ++c) {
              const double p = probs[c] / denom;
              if (p > class_prob) {
                class_prob = p;
                class_id = c;
              }
            }
          }

          const double score = detail::sigmoid_value(to) * class_prob;
          if (score < conf_threshold) continue;

          Detection d;
          d.box.cx = (detail::sigmoid_value(tx) + gx) / G;
          d.box.cy = (detail::sigmoid_value(ty) + gy) / G;
          d.box.w = anchors[b].w * std::exp(tw) / G;
          d.box.h = anchors[b].h * std::exp(th) / G;
          d.class_id = class_id;
          d.score = score;
          d.index = 0;  // assigned after sorting
          dets.push_back(d);
        }
    // Deterministic ranking: score descending, scan order breaks ties.
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    for (std::size_t i = 0; i < dets.size(); ++i) dets[i].index = static_cast<int>(i) + 1;
    out[n] = std::move(dets);
  }
  return out;
}

// One ground-truth box bound to its responsible cell and anchor.
struct Assignment {
  int gt = 0;  // index into the image's ground-truth list
  int cell_x = 0;
  int cell_y = 0;
  int anchor = 0;
};

// Assigns each ground truth to the cell containing its center and the anchor
// of highest shape-only IoU. A (cell, anchor) slot holds at most one ground
// truth; on collision the larger-area box wins and the loser is dropped from
// this batch's loss.
inline std::vector<Assignment> assign_targets(const std::vector<GroundTruth>& gts,
                                              const AnchorSet& anchors, int grid) {
  validate_anchors(anchors);
  if (grid < 1) throw std::invalid_argument("grid must be >= 1");

  std::map<std::tuple<int, int, int>, std::size_t> slot;  // (cy,cx,b) -> index into result
  std::vector<Assignment> result;
  for (std::size_t g = 0; g < gts.size(); ++g) {
    const BBox& box = gts[g].box;
    Assignment a;
    a.gt = static_cast<int>(g);
    a.cell_x = std::min(static_cast<int>(box.cx * grid), grid - 1);
    a.cell_y = std::min(static_cast<int>(box.cy * grid), grid - 1);

    double best = -1.0;
    for (std::size_t b = 0; b < anchors.size(); ++b) {
      const double v = shape_iou(box.w * grid, box.h * grid, anchors[b].w, anchors[b].h);
      if (v > best) {
        best = v;
        a.anchor = static_cast<int>(b);
      }
    }

    const auto key = std::make_tuple(a.cell_y, a.cell_x, a.anchor);
    auto it = slot.find(key);
    if (it == slot.end()) {
      slot[key] = result.size();
      result.push_back(a);
    } else {
      Assignment& held = result[it->second];
      if (box.area() > gts[held.gt].box.area()) held = a;  // displaced box drops out
    }
  }
  return result;
}

// Frozen regression targets for one assigned slot. tx/ty constrain
// sigmoid(t_x)/sigmoid(t_y); tw/th constrain the raw t_w/t_h; obj is the IoU
// of the currently decoded box against its ground truth, treated as a
// constant by the loss gradient.
template <typename T>
struct CellTarget {
  int cell_x = 0;
  int cell_y = 0;
  int anchor = 0;
  T tx = 0, ty = 0;
  T tw = 0, th = 0;
  T obj = 0;
  int class_id = 0;
};

template <typename T>
struct LossTargets {
  int grid = 0;
  int num_anchors = 0;
  int num_classes = 0;
  std::vector<std::vector<CellTarget<T>>> per_image;
};

// Builds detached targets from the current raw values: coordinate targets
// from the ground truth, objectness targets as IoU(decoded box, ground
// truth). Pure; records nothing on any tape.
template <typename T>
LossTargets<T> build_loss_targets(const Tensor<T>& raw,
                                  const std::vector<std::vector<GroundTruth>>& gts_per_image,
                                  const AnchorSet& anchors, int num_classes) {
  validate_anchors(anchors);
  const Shape4 s = raw.shape();
  const int B = static_cast<int>(anchors.size());
  if (s.c != B * (5 + num_classes))
    throw std::invalid_argument("raw prediction has " + std::to_string(s.c) + " channels, want " +
                                std::to_string(B * (5 + num_classes)));
  if (static_cast<std::size_t>(s.n) != gts_per_image.size())
    throw std::invalid_argument("batch size " + std::to_string(s.n) + " but ground truth for " +
                                std::to_string(gts_per_image.size()) + " images");
  const int G = s.h;

  LossTargets<T> targets;
  targets.grid = G;
  targets.num_anchors = B;
  targets.num_classes = num_classes;
  targets.per_image.resize(s.n);

  for (int n = 0; n < s.n; ++n) {
    const auto& gts = gts_per_image[n];
    for (const Assignment& a : assign_targets(gts, anchors, G)) {
      const BBox& gt = gts[a.gt].box;
      CellTarget<T> t;
      t.cell_x = a.cell_x;
      t.cell_y = a.cell_y;
      t.anchor = a.anchor;
      t.tx = static_cast<T>(gt.cx * G - a.cell_x);
      t.ty = static_cast<T>(gt.cy * G - a.cell_y);
      t.tw = static_cast<T>(std::log(gt.w * G / anchors[a.anchor].w));
      t.th = static_cast<T>(std::log(gt.h * G / anchors[a.anchor].h));
      t.class_id = gts[a.gt].class_id;

      const int base = a.anchor * (5 + num_classes);
      BBox decoded;
      decoded.cx = (detail::sigmoid_value(raw.at(n, base + 0, a.cell_y, a.cell_x)) + a.cell_x) / G;
      decoded.cy = (detail::sigmoid_value(raw.at(n, base + 1, a.cell_y, a.cell_x)) + a.cell_y) / G;
      decoded.w = anchors[a.anchor].w * std::exp(double(raw.at(n, base + 2, a.cell_y, a.cell_x))) / G;
      decoded.h = anchors[a.anchor].h * std::exp(double(raw.at(n, base + 3, a.cell_y, a.cell_x))) / G;
      t.obj = static_cast<T>(iou(decoded, gt));

      targets.per_image[n].push_back(t);
    }
  }
  return targets;
}

// YOLO-style loss over a raw prediction and frozen targets, normalized by
// batch size:
//   lambda_coord * [ (sigmoid(t_x)-tx*)^2 + (sigmoid(t_y)-ty*)^2
//                    + (t_w-tw*)^2 + (t_h-th*)^2 ]        per assigned slot
//   + (sigmoid(t_o) - obj*)^2                             per assigned slot
//   + lambda_noobj * sigmoid(t_o)^2                       per unassigned slot
//   + cross-entropy(class logits, class)                  per assigned slot
// Implemented as a single taped operation with an analytic gradient.
template <typename T>
Tensor<T> yolo_loss(GradientTape<T>* tape, const Tensor<T>& raw, const LossTargets<T>& targets,
                    T lambda_coord, T lambda_noobj) {
  const Shape4 s = raw.shape();
  const int B = targets.num_anchors;
  const int C = targets.num_classes;
  if (B < 1 || C < 1) throw std::invalid_argument("loss targets are empty-constructed");
  if (s.c != B * (5 + C) || s.h != targets.grid || s.w != targets.grid)
    throw std::invalid_argument("raw prediction " + s.str() + " does not match targets (grid " +
                                std::to_string(targets.grid) + ", channels " +
                                std::to_string(B * (5 + C)) + ")");
  if (static_cast<std::size_t>(s.n) != targets.per_image.size())
    throw std::invalid_argument("batch size mismatch between raw prediction and targets");

  const int G = targets.grid;
  const double inv_n = 1.0 / s.n;
  double loss = 0.0;
  std::vector<T> grad(s.numel(), T(0));
  const auto idx = [&s](int n, int c, int y, int x) {
    return ((static_cast<std::size_t>(n) * s.c + c) * s.h + y) * s.w + x;
  };

  std::vector<char> assigned(static_cast<std::size_t>(G) * G * B);
  std::vector<double> probs(C);
  for (int n = 0; n < s.n; ++n) {
    std::fill(assigned.begin(), assigned.end(), 0);
    for (const auto& t : targets.per_image[n])
      assigned[(static_cast<std::size_t>(t.cell_y) * G + t.cell_x) * B + t.anchor] = 1;

    // Objectness over every slot.
    for (int gy = 0; gy < G; ++gy)
      for (int gx = 0; gx < G; ++gx)
        for (int b = 0; b < B; ++b) {
          if (assigned[(static_cast<std::size_t>(gy) * G + gx) * B + b]) continue;
          const std::size_t i = idx(n, b * (5 + C) + 4, gy, gx);
          const double so = detail::sigmoid_value(raw.data()[i]);
          loss += lambda_noobj * so * so * inv_n;
          grad[i] += static_cast<T>(2.0 * lambda_noobj * so * so * (1.0 - so) * inv_n);
        }

    for (const auto& t : targets.per_image[n]) {
      const int base = t.anchor * (5 + C);
      const std::size_t ix = idx(n, base + 0, t.cell_y, t.cell_x);
      const std::size_t iy = idx(n, base + 1, t.cell_y, t.cell_x);
      const std::size_t iw = idx(n, base + 2, t.cell_y, t.cell_x);
      const std::size_t ih = idx(n, base + 3, t.cell_y, t.cell_x);
      const std::size_t io = idx(n, base + 4, t.cell_y, t.cell_x);

      const double sx = detail::sigmoid_value(raw.data()[ix]);
      const double sy = detail::sigmoid_value(raw.data()[iy]);
      loss += lambda_coord * ((sx - t.tx) * (sx - t.tx) + (sy - t.ty) * (sy - t.ty)) * inv_n;
      grad[ix] += static_cast<T>(2.0 * lambda_coord * (sx - t.tx) * sx * (1.0 - sx) * inv_n);
      grad[iy] += static_cast<T>(2.0 * lambda_coord * (sy - t.ty) * sy * (1.0 - sy) * inv_n);

      const double dw = raw.data()[iw] - t.tw;
      const double dh = raw.data()[ih] - t.th;
      loss += lambda_coord * (dw * dw + dh * dh) * inv_n;
      grad[iw] += static_cast<T>(2.0 * lambda_coord * dw * inv_n);
      grad[ih] += static_cast<T>(2.0 * lambda_coord * dh * inv_n);

      const double so = detail::sigmoid_value(raw.data()[io]);
      loss += (so - t.obj) * (so - t.obj) * inv_n;
      grad[io] += static_cast<T>(2.0 * (so - t.obj) * so * (1.0 - so) * inv_n);

      if (C >= 1) {  // cross-entropy; identically zero for C=1
        double mx = raw.data()[idx(n, base + 5, t.cell_y, t.cell_x)];
        for (int c = 1; c < C; ++c)
          mx = std::max(mx, double(raw.data()[idx(n, base + 5 + c, t.cell_y, t.cell_x)]));
        double denom = 0.0;
        for (int c = 0; c < C; ++c) {
          probs[c] = std::exp(double(raw.data()[idx(n, base + 5 + c, t.cell_y, t.cell_x)]) - mx);
          denom += probs[c];
        }
        const double z = raw.data()[idx(n, base + 5 + t.class_id, t.cell_y, t.cell_x)];
        loss += (std::log(denom) + mx - z) * inv_n;
        for (int c = 0; c < C; ++c) {
          const double p = probs[c] / denom;
          grad[idx(n, base + 5 + c, t.cell_y, t.cell_x)] +=
              static_cast<T>((p - (c == t.class_id ? 1.0 : 0.0)) * inv_n);
        }
      }
    }
  }

  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(loss));
  if (tape && raw.requires_grad()) {
    out.set_requires_grad(true);
    auto raw_node = raw.node();
    auto out_node = out.node();
    tape->record([raw_node, out_node, grad = std::move(grad)]() {
      if (out_node->grad.empty()) return;
      const T g = out_node->grad[0];
      raw_node->ensure_grad();
      for (std::size_t i = 0; i < grad.size(); ++i) raw_node->grad[i] += g * grad[i];
    });
  }
  return out;
}

// Builds raw prediction values that decode exactly to the given ground
// truths (sigma-inverse of the offsets, log of the scale ratios), with the
// requested objectness logit. Test helper and documentation of the decode
// equations' invertibility.
template <typename T>
Tensor<T> invert_decode(const std::vector<std::vector<GroundTruth>>& gts_per_image,
                        const AnchorSet& anchors, int num_classes, int grid, double obj_logit) {
  validate_anchors(anchors);
  const int B = static_cast<int>(anchors.size());
  Tensor<T> raw = Tensor<T>::full(
      {static_cast<int>(gts_per_image.size()), B * (5 + num_classes), grid, grid}, T(0));
  // Unfilled slots stay at logit 0; push their objectness hard negative.
  for (int n = 0; n < raw.shape().n; ++n)
    for (int gy = 0; gy < grid; ++gy)
      for (int gx = 0; gx < grid; ++gx)
        for (int b = 0; b < B; ++b) raw.at(n, b * (5 + num_classes) + 4, gy, gx) = T(-50);

  for (std::size_t n = 0; n < gts_per_image.size(); ++n) {
    const auto& gts = gts_per_image[n];
    for (const Assignment& a : assign_targets(gts, anchors, grid)) {
      const BBox& gt = gts[a.gt].box;
      const int base = a.anchor * (5 + num_classes);
      raw.at(static_cast<int>(n), base + 0, a.cell_y, a.cell_x) =
          static_cast<T>(detail::logit(gt.cx * grid - a.cell_x));
      raw.at(static_cast<int>(n), base + 1, a.cell_y, a.cell_x) =
          static_cast<T>(detail::logit(gt.cy * grid - a.cell_y));
      raw.at(static_cast<int>(n), base + 2, a.cell_y, a.cell_x) =
          static_cast<T>(std::log(gt.w * grid / anchors[a.anchor].w));
      raw.at(static_cast<int>(n), base + 3, a.cell_y, a.cell_x) =
          static_cast<T>(std::log(gt.h * grid / anchors[a.anchor].h));
      raw.at(static_cast<int>(n), base + 4, a.cell_y, a.cell_x) = static_cast<T>(obj_logit);
      if (num_classes > 1)
        raw.at(static_cast<int>(n), base + 5 + gts[a.gt].class_id, a.cell_y, a.cell_x) = T(10);
    }
  }
  return raw;
}

// IoU-distance k-means over ground-truth shapes (in grid units). Returns B
// prior shapes; deterministic given the seed. Utility for regenerating the
// anchor config from a dataset.
inline AnchorSet kmeans_anchors(const std::vector<AnchorShape>& shapes, int num_anchors,
                                std::uint64_t seed, int iterations = 100) {
  if (num_anchors < 1) throw std::invalid_argument("need at least one anchor");
  if (shapes.size() < static_cast<std::size_t>(num_anchors))
    throw std::invalid_argument("need at least as many shapes as anchors");
  for (const auto& s : shapes)
    if (s.w <= 0 || s.h <= 0) throw std::invalid_argument("shapes must be positive");

  Rng rng(seed);
  std::vector<std::size_t> order(shapes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  AnchorSet centers;
  for (int b = 0; b < num_anchors; ++b) centers.push_back(shapes[order[b]]);

  std::vector<int> owner(shapes.size(), -1);
  for (int it = 0; it < iterations; ++it) {
    bool moved = false;
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      int best = 0;
      double best_iou = -1.0;
      for (int b = 0; b < num_anchors; ++b) {
        const double v = shape_iou(shapes[i].w, shapes[i].h, centers[b].w, centers[b].h);
        if (v > best_iou) {
          best_iou = v;
          best = b;
        }
      }
      if (owner[i] != best) {
        owner[i] = best;
        moved = true;
      }
    }
    if (!moved) break;
    for (int b = 0; b < num_anchors; ++b) {
      double sw = 0, sh = 0;
      int count = 0;
      for (std::size_t i = 0; i < shapes.size(); ++i)
        if (owner[i] == b) {
          sw += shapes[i].w;
          sh += shapes[i].h;
          ++count;
        }
      if (count > 0) centers[b] = {sw / count, sh / count};
    }
  }
  return centers;
}

}  // namespace foci
