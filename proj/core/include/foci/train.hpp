#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "foci/config.hpp"
#include "foci/head.hpp"
#include "foci/network.hpp"
#include "foci/weights_io.hpp"

namespace foci {

// Training aborted on a non-finite loss; records where.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int epoch, int batch, double value)
      : std::runtime_error("non-finite loss " + std::to_string(value) + " at epoch " +
                          std::to_string(epoch) + ", batch " + std::to_string(batch)),
        epoch(epoch),
        batch(batch) {}
  int epoch;
  int batch;
};

// Adam over a fixed parameter list. Accumulators are keyed by position; the
// parameter list order must stay stable across steps (and across
// save/restore, which uses the parameter names).
template <typename T>
struct Adam {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step_count = 0;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;

  static Adam create(const TrainConfig& cfg, const std::vector<NamedTensor<T>>& params) {
    cfg.validate();
    Adam a;
    a.learning_rate = cfg.learning_rate;
    a.beta1 = cfg.beta1;
    a.beta2 = cfg.beta2;
    a.epsilon = cfg.epsilon;
    for (const auto& p : params) {
      a.m.push_back(Tensor<T>(p.tensor.shape()));
      a.v.push_back(Tensor<T>(p.tensor.shape()));
    }
    return a;
  }

  // One update over all parameters from their accumulated gradients.
  // Parameters with no gradient buffer (nothing flowed) are treated as
  // zero-gradient: their moments still decay.
  void step(std::vector<NamedTensor<T>>& params) {
    if (params.size() != m.size())
      throw std::invalid_argument("optimizer holds " + std::to_string(m.size()) +
                                  " parameter slots, got " + std::to_string(params.size()));
    ++step_count;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    for (std::size_t p = 0; p < params.size(); ++p) {
      Tensor<T>& theta = params[p].tensor;
      const std::size_t n = theta.shape().numel();
      if (m[p].shape() != theta.shape())
        throw std::invalid_argument("optimizer slot " + std::to_string(p) + " shaped " +
                                    m[p].shape().str() + ", parameter is " +
                                    theta.shape().str());
      T* mp = m[p].data();
      T* vp = v[p].data();
      T* w = theta.data();
      const bool has_grad = theta.has_grad();
      const T* g = has_grad ? theta.node()->grad.data() : nullptr;
      for (std::size_t i = 0; i < n; ++i) {
        const double gi = has_grad ? double(g[i]) : 0.0;
        const double mi = beta1 * double(mp[i]) + (1.0 - beta1) * gi;
        const double vi = beta2 * double(vp[i]) + (1.0 - beta2) * gi * gi;
        mp[i] = static_cast<T>(mi);
        vp[i] = static_cast<T>(vi);
        const double mhat = mi / bc1;
        const double vhat = vi / bc2;
        w[i] = static_cast<T>(double(w[i]) - learning_rate * mhat / (std::sqrt(vhat) + epsilon));
      }
    }
  }

  // Optimizer-state records for the weights file's OPTS section.
  std::vector<WeightRecord> to_records(const std::vector<NamedTensor<T>>& params) {
    std::vector<WeightRecord> recs;
    WeightRecord step_rec;
    step_rec.name = "adam.step";
    step_rec.extents = {1};
    step_rec.values = {static_cast<float>(step_count)};
    recs.push_back(std::move(step_rec));
    for (std::size_t p = 0; p < params.size(); ++p) {
      recs.push_back(tensor_to_record("m." + params[p].name, m[p]));
      recs.push_back(tensor_to_record("v." + params[p].name, v[p]));
    }
    return recs;
  }

  void from_records(const std::vector<WeightRecord>& recs,
                    const std::vector<NamedTensor<T>>& params) {
    if (recs.size() != 1 + 2 * params.size())
      throw WeightsError("optimizer section has " + std::to_string(recs.size()) +
                         " records, expected " + std::to_string(1 + 2 * params.size()));
    bool saw_step = false;
    for (const auto& rec : recs) {
      if (rec.name == "adam.step") {
        if (rec.numel() != 1) throw WeightsError("adam.step must hold a single value");
        step_count = static_cast<std::int64_t>(rec.values[0]);
        saw_step = true;
        continue;
      }
      bool matched = false;
      for (std::size_t p = 0; p < params.size(); ++p) {
        if (rec.name == "m." + params[p].name) {
          record_to_tensor(rec, m[p]);
          matched = true;
        } else if (rec.name == "v." + params[p].name) {
          record_to_tensor(rec, v[p]);
          matched = true;
        }
        if (matched) break;
      }
      if (!matched) throw WeightsError("unknown optimizer record '" + rec.name + "'");
    }
    if (!saw_step) throw WeightsError("optimizer section is missing adam.step");
  }
};

// One training example: an image tensor (1,1,H,W) and its ground truths.
template <typename T>
struct TrainExample {
  Tensor<T> image;
  std::vector<GroundTruth> boxes;
};

template <typename T>
struct TrainResult {
  std::vector<double> epoch_loss;  // mean loss per epoch, index 0 = first run epoch
};

// Stacks per-image tensors into one (B,1,H,W) batch input.
template <typename T>
Tensor<T> stack_images(const std::vector<const Tensor<T>*>& images) {
  if (images.empty()) throw std::invalid_argument("cannot stack an empty batch");
  const Shape4 s0 = images[0]->shape();
  Tensor<T> batch(Shape4{static_cast<int>(images.size()), s0.c, s0.h, s0.w});
  T* out = batch.data();
  const std::size_t per = s0.numel();
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Shape4 si = images[i]->shape();
    if (si != s0 || si.n != 1)
      throw std::invalid_argument("batch image " + std::to_string(i) + " shaped " + si.str() +
                                  ", expected " + s0.str());
    const T* in = images[i]->data();
    for (std::size_t j = 0; j < per; ++j) out[i * per + j] = in[j];
  }
  return batch;
}

// Runs epochs [start_epoch, config.epochs): seeded per-epoch shuffle,
// forward -> loss -> backward -> Adam step per mini-batch. Returns the mean
// loss per epoch run. Deterministic given (seed, config, dataset, network
// state). checkpoint_cb, when set, fires after each epoch whose 1-based index
// is a multiple of checkpoint_every.
template <typename T>
TrainResult<T> train_loop(Network<T>& net, Adam<T>& optimizer,
                          const std::vector<TrainExample<T>>& dataset, const TrainConfig& cfg,
                          int start_epoch = 0,
                          const std::function<void(int epoch, double mean_loss)>& epoch_cb = {},
                          const std::function<void(int epoch)>& checkpoint_cb = {}) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("training dataset is empty");
  if (start_epoch < 0 || start_epoch > cfg.epochs)
    throw std::invalid_argument("start epoch out of range");

  std::vector<NamedTensor<T>> params = net.trainable_tensors();
  const AnchorSet anchors = net.anchors();
  const T lambda_coord = static_cast<T>(cfg.lambda_coord);
  const T lambda_noobj = static_cast<T>(cfg.lambda_noobj);

  TrainResult<T> result;
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(Rng::mix(cfg.seed, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    int batch_index = 0;
    for (std::size_t pos = 0; pos < order.size(); pos += cfg.batch_size, ++batch_index) {
      const std::size_t take = std::min<std::size_t>(cfg.batch_size, order.size() - pos);
      std::vector<const Tensor<T>*> images;
      std::vector<std::vector<GroundTruth>> gts;
      for (std::size_t i = 0; i < take; ++i) {
        images.push_back(&dataset[order[pos + i]].image);
        gts.push_back(dataset[order[pos + i]].boxes);
      }
      Tensor<T> batch = stack_images(images);

      GradientTape<T> tape;
      Tensor<T> raw = network_forward(net, batch, &tape, true);
      LossTargets<T> targets = build_loss_targets(raw, gts, anchors, net.config.num_classes);
      Tensor<T> loss = yolo_loss(&tape, raw, targets, lambda_coord, lambda_noobj);

      const double loss_value = double(loss.item());
      if (!std::isfinite(loss_value)) throw TrainingDiverged(epoch, batch_index, loss_value);
      loss_sum += loss_value * static_cast<double>(take);

      for (auto& p : params) p.tensor.zero_grad();
      backward(tape, loss);
      optimizer.step(params);
    }

    const double mean_loss = loss_sum / static_cast<double>(dataset.size());
    result.epoch_loss.push_back(mean_loss);
    if (epoch_cb) epoch_cb(epoch, mean_loss);
    if (checkpoint_cb && cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0)
      checkpoint_cb(epoch);
  }
  return result;
}

}  // namespace foci
