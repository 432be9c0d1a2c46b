// foci: synthetic dataset generation, training, inference, and evaluation
// for the foci detector. Exit codes: 0 success, 1 usage/config/I-O error,
// 2 diverged training run.

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "foci/config.hpp"
#include "foci/pipeline.hpp"
#include "foci/train.hpp"

namespace {

foci::PipelineConfig resolve_config(const std::string& config_path, const std::string& preset) {
  if (!config_path.empty()) return foci::load_pipeline_config(config_path);
  return foci::preset_by_name(preset);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"foci: detection of fluorescent foci in synthetic microscopy images"};
  app.require_subcommand(1);

  std::string config_path;
  std::string preset = "desk";
  app.add_option("--config", config_path, "pipeline config file (key = value format)");
  app.add_option("--preset", preset, "built-in preset when no --config is given (desk, paper)");

  auto* gen = app.add_subcommand("gen", "generate a synthetic foci dataset");
  std::string gen_out;
  int gen_count = 0;
  bool gen_force = false;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--count", gen_count, "number of images")->required();
  gen->add_flag("--force", gen_force, "allow writing into a non-empty directory");

  auto* train = app.add_subcommand("train", "train a detector on a dataset directory");
  std::string train_data, train_out;
  int train_epochs = -1;
  std::uint64_t train_seed = 0;
  bool train_seed_set = false;
  train->add_option("--data", train_data, "dataset directory (images + annotations.jsonl)")
      ->required();
  train->add_option("--out", train_out, "output weights file")->required();
  train->add_option("--epochs", train_epochs, "override the configured epoch count");
  train->add_option("--seed", train_seed, "override the training seed")
      ->each([&](const std::string&) { train_seed_set = true; });

  auto* infer = app.add_subcommand("infer", "run detection on one image");
  std::string infer_weights, infer_image;
  double infer_conf = -1;
  infer->add_option("--weights", infer_weights, "weights file")->required();
  infer->add_option("--image", infer_image, "input PGM image")->required();
  infer->add_option("--conf", infer_conf, "confidence threshold override");

  auto* eval = app.add_subcommand("eval", "evaluate weights against a dataset directory");
  std::string eval_weights, eval_data, eval_report;
  double eval_iou = -1, eval_conf = -1, eval_nms = -1;
  eval->add_option("--weights", eval_weights, "weights file")->required();
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_option("--report", eval_report, "output JSON report path")->required();
  eval->add_option("--iou", eval_iou, "matching IoU threshold override");
  eval->add_option("--conf", eval_conf, "confidence threshold override");
  eval->add_option("--nms", eval_nms, "NMS IoU threshold override");

  CLI11_PARSE(app, argc, argv);

  try {
    foci::PipelineConfig cfg = resolve_config(config_path, preset);

    if (gen->parsed()) {
      foci::GenResult result = foci::run_gen(cfg, gen_out, gen_count, gen_force);
      std::cout << result.manifest_path << "\n";
      return 0;
    }

    if (train->parsed()) {
      if (train_epochs >= 0) cfg.train.epochs = train_epochs;
      if (train_seed_set) cfg.train.seed = train_seed;
      foci::TrainRunResult result = foci::run_train(cfg, train_data, train_out, &std::cout);
      std::cout << "weights " << result.weights_path << "\n";
      std::cout << "history " << result.history_path << "\n";
      return 0;
    }

    if (infer->parsed()) {
      if (infer_conf >= 0) cfg.eval.conf_threshold = infer_conf;
      foci::InferResult result = foci::run_infer(cfg, infer_weights, infer_image);
      for (const auto& line : result.lines) std::cout << line << "\n";
      std::cout << "count " << result.detections.size() << "\n";
      return 0;
    }

    if (eval->parsed()) {
      if (eval_iou >= 0) cfg.eval.iou_threshold = eval_iou;
      if (eval_conf >= 0) cfg.eval.conf_threshold = eval_conf;
      if (eval_nms >= 0) cfg.eval.nms_threshold = eval_nms;
      foci::EvalRunResult result = foci::run_eval(cfg, eval_weights, eval_data, eval_report);
      char line[96];
      std::snprintf(line, sizeof(line), "mAP@%.2f %.6f", result.report.iou_threshold,
                    result.report.map);
      std::cout << line << "\n";
      std::snprintf(line, sizeof(line), "max_recall %.6f", result.report.max_recall);
      std::cout << line << "\n";
      std::cout << "report " << result.report_path << "\n";
      return 0;
    }
  } catch (const foci::TrainingDiverged& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
