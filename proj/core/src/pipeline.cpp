#include "foci/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "foci/annotations.hpp"
#include "foci/image.hpp"
#include "foci/synth.hpp"
#include "foci/weights_io.hpp"

namespace fs = std::filesystem;

namespace foci {

GenResult run_gen(const PipelineConfig& cfg, const std::string& out_dir, int count, bool force) {
  cfg.validate();
  if (count < 0) throw std::invalid_argument("image count must be >= 0");
  if (fs::exists(out_dir)) {
    if (!fs::is_directory(out_dir))
      throw std::runtime_error(out_dir + " exists and is not a directory");
    if (!force && !fs::is_empty(out_dir))
      throw std::runtime_error("output directory " + out_dir +
                               " is not empty; pass --force to overwrite");
  } else {
    fs::create_directories(out_dir);
  }
  GenResult result;
  result.manifest_path = generate_dataset(cfg.synth, count, out_dir);
  result.count = count;
  return result;
}

LoadedDataset load_dataset(const std::string& data_dir, int expected_size) {
  const fs::path dir(data_dir);
  const fs::path ann_path = dir / "annotations.jsonl";
  if (!fs::exists(ann_path))
    throw std::runtime_error("dataset directory " + data_dir + " has no annotations.jsonl");

  LoadedDataset ds;
  for (const auto& ann : read_annotations(ann_path.string())) {
    const ImageU8 img = read_pgm((dir / ann.image).string());
    if (img.width != expected_size || img.height != expected_size)
      throw std::runtime_error("image " + ann.image + " is " + std::to_string(img.width) + "x" +
                               std::to_string(img.height) + ", network expects " +
                               std::to_string(expected_size) + "x" +
                               std::to_string(expected_size));
    TrainExample<float> ex;
    ex.image = image_to_tensor<float>(img);
    ex.boxes = ann.boxes;
    ds.gts.per_image.push_back(ann.boxes);
    ds.examples.push_back(std::move(ex));
    ds.image_names.push_back(ann.image);
  }
  return ds;
}

void save_network(Network<float>& net, const std::string& path, Adam<float>* optimizer) {
  WeightsFile file;
  std::vector<NamedTensor<float>> tensors = net.named_tensors();
  file.params = tensors_to_records(tensors);
  if (optimizer) {
    std::vector<NamedTensor<float>> trainable = net.trainable_tensors();
    file.has_opts = true;
    file.opts = optimizer->to_records(trainable);
  }
  write_weights(path, file);
}

Network<float> load_network(const NetworkConfig& cfg, const std::string& path,
                            Adam<float>* optimizer, const TrainConfig* train_cfg) {
  const WeightsFile file = read_weights(path);
  Network<float> net = build_network<float>(cfg, 0);
  std::vector<NamedTensor<float>> tensors = net.named_tensors();
  records_to_tensors(file.params, tensors);
  net.sync_anchors_from_store();
  if (optimizer) {
    if (!train_cfg) throw std::invalid_argument("optimizer restore needs a training config");
    if (!file.has_opts)
      throw WeightsError(path + " has no optimizer section to resume from");
    std::vector<NamedTensor<float>> trainable = net.trainable_tensors();
    *optimizer = Adam<float>::create(*train_cfg, trainable);
    optimizer->from_records(file.opts, trainable);
  }
  return net;
}

TrainRunResult run_train(const PipelineConfig& cfg, const std::string& data_dir,
                         const std::string& weights_out, std::ostream* log) {
  cfg.validate();
  LoadedDataset ds = load_dataset(data_dir, cfg.network.input_resolution);
  if (ds.examples.empty()) throw std::runtime_error("dataset " + data_dir + " is empty");

  Network<float> net = build_network<float>(cfg.network, cfg.train.seed);
  std::vector<NamedTensor<float>> params = net.trainable_tensors();
  Adam<float> optimizer = Adam<float>::create(cfg.train, params);

  auto epoch_cb = [&](int epoch, double mean_loss) {
    if (log) {
      char line[96];
      std::snprintf(line, sizeof(line), "epoch %d/%d loss %.6f", epoch + 1, cfg.train.epochs,
                    mean_loss);
      (*log) << line << "\n" << std::flush;
    }
  };
  auto checkpoint_cb = [&](int epoch) {
    char suffix[32];
    std::snprintf(suffix, sizeof(suffix), ".ckpt%03d", epoch + 1);
    save_network(net, weights_out + suffix, &optimizer);
  };

  TrainResult<float> trained =
      train_loop(net, optimizer, ds.examples, cfg.train, 0, epoch_cb, checkpoint_cb);

  save_network(net, weights_out);

  TrainRunResult result;
  result.epoch_loss = trained.epoch_loss;
  result.weights_path = weights_out;
  result.history_path = weights_out + ".history";
  std::ofstream hist(result.history_path, std::ios::binary | std::ios::trunc);
  if (!hist) throw std::runtime_error("cannot open " + result.history_path + " for writing");
  for (std::size_t i = 0; i < trained.epoch_loss.size(); ++i) {
    char line[96];
    std::snprintf(line, sizeof(line), "epoch %zu loss %.9g\n", i + 1, trained.epoch_loss[i]);
    hist << line;
  }
  return result;
}

namespace {

// Post-NMS detections ranked and re-indexed 1..n, with their print lines.
InferResult format_detections(std::vector<Detection> dets, const NetworkConfig& net_cfg) {
  std::sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.index < b.index;
  });
  InferResult out;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    Detection d = dets[i];
    d.index = static_cast<int>(i) + 1;
    const std::string& cls = d.class_id < static_cast<int>(net_cfg.class_names.size())
                                 ? net_cfg.class_names[d.class_id]
                                 : "class" + std::to_string(d.class_id);
    char line[160];
    std::snprintf(line, sizeof(line), "%s: %.4f %d cx=%.6f cy=%.6f w=%.6f h=%.6f", cls.c_str(),
                  d.score, d.index, d.box.cx, d.box.cy, d.box.w, d.box.h);
    out.detections.push_back(d);
    out.lines.emplace_back(line);
  }
  return out;
}

std::vector<std::vector<Detection>> detect_all(Network<float>& net, const PipelineConfig& cfg,
                                               const std::vector<TrainExample<float>>& examples) {
  std::vector<std::vector<Detection>> dets_per_image;
  const AnchorSet anchors = net.anchors();
  for (const auto& ex : examples) {
    Tensor<float> raw = network_forward<float>(net, ex.image, nullptr, false);
    auto decoded = decode(raw, anchors, net.config.num_classes, cfg.eval.conf_threshold);
    dets_per_image.push_back(nms(decoded[0], cfg.eval.nms_threshold));
  }
  return dets_per_image;
}

}  // namespace

InferResult run_infer(const PipelineConfig& cfg, const std::string& weights_path,
                      const std::string& image_path) {
  cfg.validate();
  Network<float> net = load_network(cfg.network, weights_path);
  const ImageU8 img = read_pgm(image_path);
  if (img.width != cfg.network.input_resolution || img.height != cfg.network.input_resolution)
    throw std::runtime_error("image " + image_path + " is " + std::to_string(img.width) + "x" +
                             std::to_string(img.height) + ", network expects " +
                             std::to_string(cfg.network.input_resolution) + "x" +
                             std::to_string(cfg.network.input_resolution));

  Tensor<float> input = image_to_tensor<float>(img);
  Tensor<float> raw = network_forward<float>(net, input, nullptr, false);
  auto decoded = decode(raw, net.anchors(), net.config.num_classes, cfg.eval.conf_threshold);
  std::vector<Detection> kept = nms(decoded[0], cfg.eval.nms_threshold);
  return format_detections(std::move(kept), cfg.network);
}

EvalRunResult run_eval(const PipelineConfig& cfg, const std::string& weights_path,
                       const std::string& data_dir, const std::string& report_path) {
  cfg.validate();
  Network<float> net = load_network(cfg.network, weights_path);
  LoadedDataset ds = load_dataset(data_dir, cfg.network.input_resolution);

  auto dets_per_image = detect_all(net, cfg, ds.examples);
  EvalRunResult result;
  result.report = evaluate(dets_per_image, ds.gts, cfg.eval.iou_threshold,
                           cfg.network.num_classes, cfg.network.class_names, ds.image_names,
                           cfg.eval.conf_threshold);
  result.report_path = report_path;

  const std::string text = result.report.to_json();
  std::ofstream out(report_path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + report_path + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("write failed for " + report_path);
  return result;
}

}  // namespace foci
