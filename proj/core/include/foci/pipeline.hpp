#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "foci/config.hpp"
#include "foci/eval.hpp"
#include "foci/network.hpp"
#include "foci/train.hpp"

namespace foci {

// High-level commands shared by the CLI and the end-to-end tests. All are
// deterministic given config + seed. Errors are reported by exception:
// TrainingDiverged for a non-finite loss, std::exception otherwise.

struct GenResult {
  std::string manifest_path;
  int count = 0;
};

// Refuses a non-empty output directory unless force is set; creates the
// directory if missing.
GenResult run_gen(const PipelineConfig& cfg, const std::string& out_dir, int count, bool force);

// A dataset directory's contents, decoded and validated against the network
// input resolution.
struct LoadedDataset {
  std::vector<TrainExample<float>> examples;
  std::vector<std::string> image_names;
  GroundTruthSet gts;
};

LoadedDataset load_dataset(const std::string& data_dir, int expected_size);

struct TrainRunResult {
  std::vector<double> epoch_loss;
  std::string weights_path;
  std::string history_path;  // one "epoch <i> loss <value>" line per epoch
};

// Builds a fresh seeded network, trains on the dataset in data_dir, writes
// the weights to weights_out (plus weights_out + ".history" and periodic
// checkpoints weights_out + ".ckpt<NNN>" carrying optimizer state). Per-epoch
// loss lines go to log when non-null.
TrainRunResult run_train(const PipelineConfig& cfg, const std::string& data_dir,
                         const std::string& weights_out, std::ostream* log);

// Weight-file bridges for the float network. save includes the OPTS section
// when optimizer is non-null; load restores it when present and requested.
void save_network(Network<float>& net, const std::string& path, Adam<float>* optimizer = nullptr);
Network<float> load_network(const NetworkConfig& cfg, const std::string& path,
                            Adam<float>* optimizer = nullptr,
                            const TrainConfig* train_cfg = nullptr);

struct InferResult {
  std::vector<Detection> detections;  // post-NMS, descending score, re-indexed from 1
  std::vector<std::string> lines;     // "Cell: <score:4dp> <index> cx=... cy=... w=... h=..."
};

InferResult run_infer(const PipelineConfig& cfg, const std::string& weights_path,
                      const std::string& image_path);

struct EvalRunResult {
  EvalReport report;
  std::string report_path;
};

EvalRunResult run_eval(const PipelineConfig& cfg, const std::string& weights_path,
                       const std::string& data_dir, const std::string& report_path);

}  // namespace foci
