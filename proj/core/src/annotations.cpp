#include "foci/annotations.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace foci {

namespace {

using nlohmann::ordered_json;

std::string where(const std::string& origin, std::size_t line) {
  return origin + ":" + std::to_string(line) + ": ";
}

}  // namespace

std::vector<ImageAnnotation> parse_annotations(const std::string& text, const std::string& origin) {
  std::vector<ImageAnnotation> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;

    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error(where(origin, lineno) + "invalid JSON: " + e.what());
    }
    if (!j.is_object() || !j.contains("image") || !j.contains("boxes"))
      throw std::runtime_error(where(origin, lineno) +
                               "annotation object needs \"image\" and \"boxes\"");
    ImageAnnotation ann;
    try {
      ann.image = j.at("image").get<std::string>();
      for (const auto& jb : j.at("boxes")) {
        GroundTruth gt;
        gt.box.cx = jb.at("cx").get<double>();
        gt.box.cy = jb.at("cy").get<double>();
        gt.box.w = jb.at("w").get<double>();
        gt.box.h = jb.at("h").get<double>();
        gt.class_id = jb.at("class").get<int>();
        if (!gt.box.valid())
          throw std::runtime_error("box (" + std::to_string(gt.box.cx) + "," +
                                   std::to_string(gt.box.cy) + "," + std::to_string(gt.box.w) +
                                   "," + std::to_string(gt.box.h) +
                                   ") violates normalized-coordinate bounds");
        if (gt.class_id < 0) throw std::runtime_error("negative class id");
        ann.boxes.push_back(gt);
      }
    } catch (const std::exception& e) {
      throw std::runtime_error(where(origin, lineno) + e.what());
    }
    out.push_back(std::move(ann));
  }
  return out;
}

std::string format_annotations(const std::vector<ImageAnnotation>& annotations) {
  std::string out;
  for (const auto& ann : annotations) {
    ordered_json j;
    j["image"] = ann.image;
    j["boxes"] = ordered_json::array();
    for (const auto& gt : ann.boxes)
      j["boxes"].push_back({{"cx", gt.box.cx},
                            {"cy", gt.box.cy},
                            {"w", gt.box.w},
                            {"h", gt.box.h},
                            {"class", gt.class_id}});
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<ImageAnnotation> read_annotations(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open annotation file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_annotations(buf.str(), path);
}

void write_annotations(const std::string& path, const std::vector<ImageAnnotation>& annotations) {
  const std::string text = format_annotations(annotations);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("write failed for " + path);
}

}  // namespace foci
