#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "foci/tensor.hpp"

namespace foci {

// 8-bit grayscale raster.
struct ImageU8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  std::uint8_t& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

// Malformed or non-P5 PGM input.
class PgmFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Binary 8-bit PGM ("P5", maxval 255) reader/writer. Writer output reads
// back bit-exactly.
ImageU8 read_pgm(const std::string& path);
void write_pgm(const std::string& path, const ImageU8& image);

// Encode/decode without touching the filesystem (used by tests and the
// writers above).
ImageU8 decode_pgm(const std::string& bytes, const std::string& origin = "<memory>");
std::string encode_pgm(const ImageU8& image);

// Bridge to the network input: (1,1,H,W) tensor scaled to [0,1].
template <typename T>
Tensor<T> image_to_tensor(const ImageU8& image) {
  Tensor<T> t(Shape4{1, 1, image.height, image.width});
  T* d = t.data();
  for (std::size_t i = 0; i < image.pixels.size(); ++i)
    d[i] = static_cast<T>(image.pixels[i]) / T(255);
  return t;
}

}  // namespace foci
