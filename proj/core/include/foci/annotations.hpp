#pragma once

#include <string>
#include <vector>

#include "foci/boxes.hpp"

namespace foci {

// One annotation row: an image filename and its ground-truth boxes in
// normalized coordinates.
struct ImageAnnotation {
  std::string image;
  std::vector<GroundTruth> boxes;
};

// JSON-lines annotation file: one object per line,
//   {"image": "...", "boxes": [{"cx":f,"cy":f,"w":f,"h":f,"class":i}, ...]}
// Parse errors carry the file path and 1-based line number.
std::vector<ImageAnnotation> read_annotations(const std::string& path);
void write_annotations(const std::string& path, const std::vector<ImageAnnotation>& annotations);

// In-memory forms used by the file functions and the tests.
std::vector<ImageAnnotation> parse_annotations(const std::string& text,
                                               const std::string& origin = "<memory>");
std::string format_annotations(const std::vector<ImageAnnotation>& annotations);

}  // namespace foci
