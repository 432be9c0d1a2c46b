#include "foci/image.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

namespace foci {

namespace {

// Reads one PGM header token, skipping whitespace and '#' comment lines.
std::string next_token(const std::string& bytes, std::size_t& pos, const std::string& origin) {
  while (pos < bytes.size()) {
    const char c = bytes[pos];
    if (c == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
  if (start == pos) throw PgmFormatError(origin + ": truncated PGM header");
  return bytes.substr(start, pos - start);
}

int parse_dim(const std::string& token, const std::string& what, const std::string& origin) {
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(token, &used);
  } catch (const std::exception&) {
    throw PgmFormatError(origin + ": non-numeric " + what + " '" + token + "'");
  }
  if (used != token.size() || v < 1)
    throw PgmFormatError(origin + ": invalid " + what + " '" + token + "'");
  return v;
}

}  // namespace

ImageU8 decode_pgm(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5')
    throw PgmFormatError(origin + ": not a binary PGM (magic 'P5' missing)");
  std::size_t pos = 2;
  ImageU8 img;
  img.width = parse_dim(next_token(bytes, pos, origin), "width", origin);
  img.height = parse_dim(next_token(bytes, pos, origin), "height", origin);
  const int maxval = parse_dim(next_token(bytes, pos, origin), "maxval", origin);
  if (maxval != 255)
    throw PgmFormatError(origin + ": unsupported maxval " + std::to_string(maxval) +
                         " (only 255)");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw PgmFormatError(origin + ": missing whitespace after maxval");
  ++pos;  // exactly one whitespace byte separates header and raster

  const std::size_t need = static_cast<std::size_t>(img.width) * img.height;
  if (bytes.size() - pos < need)
    throw PgmFormatError(origin + ": raster truncated (" + std::to_string(bytes.size() - pos) +
                         " of " + std::to_string(need) + " bytes)");
  if (bytes.size() - pos > need)
    throw PgmFormatError(origin + ": trailing bytes after raster");
  img.pixels.resize(need);
  for (std::size_t i = 0; i < need; ++i) img.pixels[i] = static_cast<std::uint8_t>(bytes[pos + i]);
  return img;
}

std::string encode_pgm(const ImageU8& image) {
  if (image.width < 1 || image.height < 1 ||
      image.pixels.size() != static_cast<std::size_t>(image.width) * image.height)
    throw std::invalid_argument("image extents do not match pixel count");
  std::ostringstream out;
  out << "P5\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
  return out.str();
}

ImageU8 read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_pgm(buf.str(), path);
}

void write_pgm(const std::string& path, const ImageU8& image) {
  const std::string bytes = encode_pgm(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path);
}

}  // namespace foci
