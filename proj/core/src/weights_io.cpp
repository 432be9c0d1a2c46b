#include "foci/weights_io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace foci {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

struct Reader {
  const std::string& bytes;
  std::size_t pos = 0;
  const std::string& origin;

  void need(std::size_t n, const char* what) const {
    if (bytes.size() - pos < n)
      throw TruncatedFileError(origin + ": truncated while reading " + std::string(what));
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    const auto b = [&](int i) {
      return static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i]));
    };
    const std::uint32_t v = b(0) | (b(1) << 8) | (b(2) << 16) | (b(3) << 24);
    pos += 4;
    return v;
  }

  float f32(const char* what) {
    const std::uint32_t bits = u32(what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes.substr(pos, n);
    pos += n;
    return s;
  }
};

void encode_records(std::string& out, const std::vector<WeightRecord>& recs) {
  put_u32(out, static_cast<std::uint32_t>(recs.size()));
  for (const auto& rec : recs) {
    put_u32(out, static_cast<std::uint32_t>(rec.name.size()));
    out += rec.name;
    put_u32(out, static_cast<std::uint32_t>(rec.extents.size()));
    for (auto e : rec.extents) put_u32(out, e);
    for (float v : rec.values) put_f32(out, v);
  }
}

std::vector<WeightRecord> decode_records(Reader& r) {
  const std::uint32_t count = r.u32("record count");
  std::vector<WeightRecord> recs;
  recs.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    WeightRecord rec;
    const std::uint32_t name_len = r.u32("name length");
    rec.name = r.str(name_len, "record name");
    const std::uint32_t rank = r.u32("rank");
    if (rank == 0 || rank > 8)
      throw WeightsError(r.origin + ": record '" + rec.name + "' has implausible rank " +
                         std::to_string(rank));
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint32_t e = r.u32("extent");
      if (e == 0) throw WeightsError(r.origin + ": record '" + rec.name + "' has a zero extent");
      rec.extents.push_back(e);
      numel *= e;
    }
    r.need(numel * 4, "record values");
    rec.values.reserve(numel);
    for (std::size_t v = 0; v < numel; ++v) rec.values.push_back(r.f32("value"));
    recs.push_back(std::move(rec));
  }
  return recs;
}

}  // namespace

std::string encode_weights(const WeightsFile& file) {
  std::string out;
  out += "FOCI";
  put_u32(out, file.version);
  encode_records(out, file.params);
  if (file.has_opts) {
    out += "OPTS";
    encode_records(out, file.opts);
  }
  return out;
}

WeightsFile decode_weights(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < 4 || bytes.compare(0, 4, "FOCI") != 0)
    throw BadMagicError(origin + ": not a FOCI weights file (bad magic)");
  Reader r{bytes, 4, origin};
  WeightsFile file;
  file.version = r.u32("version");
  if (file.version != kWeightsVersion)
    throw UnknownVersionError(origin + ": unknown format version " +
                              std::to_string(file.version) + " (this build reads " +
                              std::to_string(kWeightsVersion) + ")");
  file.params = decode_records(r);
  if (r.pos < bytes.size()) {
    const std::string tag = r.str(4, "section tag");
    if (tag != "OPTS")
      throw WeightsError(origin + ": unknown section tag '" + tag + "' after parameters");
    file.has_opts = true;
    file.opts = decode_records(r);
  }
  if (r.pos != bytes.size())
    throw WeightsError(origin + ": trailing bytes after the last section");
  return file;
}

WeightsFile read_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open weights file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_weights(buf.str(), path);
}

void write_weights(const std::string& path, const WeightsFile& file) {
  const std::string bytes = encode_weights(file);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path);
}

}  // namespace foci
