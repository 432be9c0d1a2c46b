#include "foci/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace foci {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) parts.push_back(trim(item));
  return parts;
}

[[noreturn]] void fail(const std::string& origin, int line, const std::string& msg) {
  throw std::invalid_argument(origin + ":" + std::to_string(line) + ": " + msg);
}

double to_double(const std::string& v, const std::string& origin, int line) {
  try {
    std::size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    fail(origin, line, "expected a number, got '" + v + "'");
  }
}

std::int64_t to_int(const std::string& v, const std::string& origin, int line) {
  try {
    std::size_t pos = 0;
    std::int64_t i = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    fail(origin, line, "expected an integer, got '" + v + "'");
  }
}

}  // namespace

PipelineConfig desk_preset() {
  PipelineConfig cfg;
  cfg.network.preset = "desk";
  cfg.network.input_resolution = 64;
  cfg.network.stage_widths = {4, 8, 16, 32, 64, 128};
  cfg.network.fpn_width = 16;
  cfg.network.head_channels = 64;
  cfg.network.anchors = {{0.35, 0.35}, {0.5, 0.5}, {0.7, 0.7}, {0.45, 0.7}, {0.7, 0.45}};
  cfg.train.learning_rate = 1e-3;
  cfg.train.batch_size = 8;
  cfg.train.epochs = 40;
  cfg.train.seed = 1;
  cfg.synth = SynthConfig{};
  return cfg;
}

PipelineConfig paper_preset() {
  PipelineConfig cfg;
  cfg.network.preset = "paper";
  cfg.network.input_resolution = 512;
  cfg.network.stage_widths = {32, 64, 128, 256, 512, 1024};
  cfg.network.fpn_width = 128;
  cfg.network.head_channels = 512;
  cfg.network.anchors = {{1, 1}, {2, 2}, {4, 4}, {2, 4}, {4, 2}};
  cfg.train.learning_rate = 1e-5;
  cfg.train.batch_size = 8;
  cfg.train.epochs = 100;
  cfg.train.seed = 1;
  cfg.synth.image_size = 512;
  cfg.synth.count_min = 4;
  cfg.synth.count_max = 24;
  cfg.synth.radius_min = 6;
  cfg.synth.radius_max = 24;
  cfg.synth.cluster_prob = 0.3;
  cfg.synth.cluster_spread = 40;
  cfg.synth.min_spacing = 48;
  return cfg;
}

PipelineConfig preset_by_name(const std::string& name) {
  if (name == "desk") return desk_preset();
  if (name == "paper") return paper_preset();
  throw std::invalid_argument("unknown preset '" + name + "' (expected 'desk' or 'paper')");
}

std::string anchors_to_string(const std::vector<AnchorShape>& anchors) {
  std::string out;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    if (i) out += ", ";
    std::ostringstream ss;
    ss << anchors[i].w << "x" << anchors[i].h;
    out += ss.str();
  }
  return out;
}

std::vector<AnchorShape> parse_anchors(const std::string& text) {
  std::vector<AnchorShape> anchors;
  for (const auto& part : split(text, ',')) {
    if (part.empty()) continue;
    std::size_t x = part.find('x');
    if (x == std::string::npos)
      throw std::invalid_argument("anchor '" + part + "' is not of the form WxH");
    anchors.push_back({std::stod(part.substr(0, x)), std::stod(part.substr(x + 1))});
  }
  return anchors;
}

PipelineConfig parse_pipeline_config(const std::string& text, const std::string& origin) {
  // First pass: an optional [pipeline] preset selects the base config.
  PipelineConfig cfg = desk_preset();
  {
    std::istringstream in(text);
    std::string raw;
    int lineno = 0;
    std::string section;
    while (std::getline(in, raw)) {
      ++lineno;
      std::string line = trim(raw.substr(0, raw.find('#')));
      if (line.empty()) continue;
      if (line.front() == '[') {
        section = line;
        continue;
      }
      std::size_t eq = line.find('=');
      if (eq == std::string::npos) continue;
      if (section == "[pipeline]" && trim(line.substr(0, eq)) == "preset")
        cfg = preset_by_name(trim(line.substr(eq + 1)));
    }
  }

  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  std::string section;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail(origin, lineno, "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "pipeline" && section != "network" && section != "train" &&
          section != "synth" && section != "eval")
        fail(origin, lineno, "unknown section [" + section + "]");
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) fail(origin, lineno, "expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (section.empty()) fail(origin, lineno, "key '" + key + "' outside any section");

    try {
      if (section == "pipeline") {
        if (key == "preset") continue;  // handled in the first pass
        fail(origin, lineno, "unknown key '" + key + "' in [pipeline]");
      } else if (section == "network") {
        auto& n = cfg.network;
        if (key == "input_resolution") n.input_resolution = static_cast<int>(to_int(value, origin, lineno));
        else if (key == "widths") {
          n.stage_widths.clear();
          for (const auto& p : split(value, ',')) n.stage_widths.push_back(static_cast<int>(to_int(p, origin, lineno)));
        } else if (key == "fpn_width") n.fpn_width = static_cast<int>(to_int(value, origin, lineno));
        else if (key == "head_channels") n.head_channels = static_cast<int>(to_int(value, origin, lineno));
        else if (key == "anchors") n.anchors = parse_anchors(value);
        else if (key == "num_classes") n.num_classes = static_cast<int>(to_int(value, origin, lineno));
        else if (key == "class_names") n.class_names = split(value, ',');
        else if (key == "leaky_slope") n.leaky_slope = to_double(value, origin, lineno);
        else if (key == "bn_eps") n.bn_eps = to_double(value, origin, lineno);
        else if (key == "bn_momentum") n.bn_momentum = to_double(value, origin, lineno);
        else fail(origin, lineno, "unknown key '" + key + "' in [network]");
      } else if (section == "train") {
        auto& t = cfg.train;
        if (key == "learning_rate") t.learning_rate = to_double(value, origin, lineno);
        else if (key == "batch_size") t.batch_size = static_cast<int>(to_int(value, origin, lineno));
        else if (key == "epochs") t.epochs = static_cast<int>(to_int(value, origin, lineno));
        else if (key == "beta1") t.beta1 = to_double(value, origin, lineno);
        else if (key == "beta2") t.beta2 = to_double(value, origin, lineno);
        else if (key == "epsilon") t.epsilon = to_double(value, origin, lineno);
        else if (key == "seed") t.seed = static_cast<std::uint64_t>(to_int(value, origin, lineno));
        else if (key == "checkpoint_every") t.checkpoint_every = static_cast<int>(to_int(value, origin, lineno));
        else if (key == "lambda_coord") t.lambda_coord = to_double(value, origin, lineno);
        else if (key == "lambda_noobj") t.lambda_noobj = to_double(value, origin, lineno);
        else fail(origin, lineno, "unknown key '" + key + "' in [train]");
      } else if (section == "synth") {
        auto& s = cfg.synth;
        if (key == "image_size") s.image_size = static_cast<int>(to_int(value, origin, lineno));
        else if (key == "count_min") s.count_min = static_cast<int>(to_int(value, origin, lineno));
        else if (key == "count_max") s.count_max = static_cast<int>(to_int(value, origin, lineno));
        else if (key == "radius_min") s.radius_min = to_double(value, origin, lineno);
        else if (key == "radius_max") s.radius_max = to_double(value, origin, lineno);
        else if (key == "intensity_min") s.intensity_min = to_double(value, origin, lineno);
        else if (key == "intensity_max") s.intensity_max = to_double(value, origin, lineno);
        else if (key == "background") s.background = to_double(value, origin, lineno);
        else if (key == "noise_std") s.noise_std = to_double(value, origin, lineno);
        else if (key == "cluster_prob") s.cluster_prob = to_double(value, origin, lineno);
        else if (key == "cluster_spread") s.cluster_spread = to_double(value, origin, lineno);
        else if (key == "min_spacing") s.min_spacing = to_double(value, origin, lineno);
        else if (key == "seed") s.seed = static_cast<std::uint64_t>(to_int(value, origin, lineno));
        else fail(origin, lineno, "unknown key '" + key + "' in [synth]");
      } else if (section == "eval") {
        auto& e = cfg.eval;
        if (key == "iou_threshold") e.iou_threshold = to_double(value, origin, lineno);
        else if (key == "nms_threshold") e.nms_threshold = to_double(value, origin, lineno);
        else if (key == "conf_threshold") e.conf_threshold = to_double(value, origin, lineno);
        else fail(origin, lineno, "unknown key '" + key + "' in [eval]");
      }
    } catch (const std::invalid_argument&) {
      throw;
    }
  }

  cfg.validate();
  return cfg;
}

PipelineConfig load_pipeline_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_pipeline_config(ss.str(), path);
}

}  // namespace foci
