#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "foci/layers.hpp"

namespace foci {

class WeightsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File does not start with the FOCI magic.
class BadMagicError : public WeightsError {
 public:
  using WeightsError::WeightsError;
};

// Format version this build does not understand; nothing is loaded.
class UnknownVersionError : public WeightsError {
 public:
  using WeightsError::WeightsError;
};

// File ends mid-record.
class TruncatedFileError : public WeightsError {
 public:
  using WeightsError::WeightsError;
};

constexpr std::uint32_t kWeightsVersion = 1;

// One named tensor as stored on disk: extents (row-major) and f32 values.
struct WeightRecord {
  std::string name;
  std::vector<std::uint32_t> extents;
  std::vector<float> values;

  std::size_t numel() const {
    std::size_t n = 1;
    for (auto e : extents) n *= e;
    return n;
  }
};

// Weight-file contents: parameter records plus an optional optimizer-state
// section (tag "OPTS", same record encoding).
struct WeightsFile {
  std::uint32_t version = kWeightsVersion;
  std::vector<WeightRecord> params;
  bool has_opts = false;
  std::vector<WeightRecord> opts;
};

// Little-endian binary layout: magic "FOCI", version u32, record count u32,
// then per record: name length u32 + UTF-8 bytes, rank u32, extents u32 each,
// values f32 each. Optionally "OPTS" + count u32 + records. Round-trips are
// byte-exact.
std::string encode_weights(const WeightsFile& file);
WeightsFile decode_weights(const std::string& bytes, const std::string& origin = "<memory>");
WeightsFile read_weights(const std::string& path);
void write_weights(const std::string& path, const WeightsFile& file);

// Tensor bridges. Records store f32 regardless of the in-memory scalar type.
template <typename T>
WeightRecord tensor_to_record(const std::string& name, const Tensor<T>& t) {
  WeightRecord rec;
  rec.name = name;
  const Shape4 s = t.shape();
  rec.extents = {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
                 static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)};
  rec.values.reserve(s.numel());
  const T* d = t.data();
  for (std::size_t i = 0; i < s.numel(); ++i) rec.values.push_back(static_cast<float>(d[i]));
  return rec;
}

// Copies a record's values into an existing tensor; the record's extents must
// equal the tensor's shape, and the error names the first mismatched
// dimension.
template <typename T>
void record_to_tensor(const WeightRecord& rec, Tensor<T>& t) {
  const Shape4 s = t.shape();
  const int dims[4] = {s.n, s.c, s.h, s.w};
  static const char* axis[4] = {"n", "c", "h", "w"};
  if (rec.extents.size() != 4)
    throw WeightsError("record '" + rec.name + "' has rank " +
                       std::to_string(rec.extents.size()) + ", expected 4");
  for (int i = 0; i < 4; ++i)
    if (rec.extents[i] != static_cast<std::uint32_t>(dims[i]))
      throw WeightsError("record '" + rec.name + "' dimension " + axis[i] + " is " +
                         std::to_string(rec.extents[i]) + ", model expects " +
                         std::to_string(dims[i]));
  T* d = t.data();
  for (std::size_t i = 0; i < rec.values.size(); ++i) d[i] = static_cast<T>(rec.values[i]);
}

template <typename T>
std::vector<WeightRecord> tensors_to_records(std::vector<NamedTensor<T>>& tensors) {
  std::vector<WeightRecord> recs;
  recs.reserve(tensors.size());
  for (auto& nt : tensors) recs.push_back(tensor_to_record(nt.name, nt.tensor));
  return recs;
}

// Fills every named tensor from its record; every name must be present
// exactly once and no record may be left over.
template <typename T>
void records_to_tensors(const std::vector<WeightRecord>& recs,
                        std::vector<NamedTensor<T>>& tensors) {
  if (recs.size() != tensors.size())
    throw WeightsError("weight file has " + std::to_string(recs.size()) + " records, model has " +
                       std::to_string(tensors.size()) + " tensors");
  std::vector<bool> used(recs.size(), false);
  for (auto& nt : tensors) {
    bool found = false;
    for (std::size_t i = 0; i < recs.size(); ++i) {
      if (used[i] || recs[i].name != nt.name) continue;
      record_to_tensor(recs[i], nt.tensor);
      used[i] = true;
      found = true;
      break;
    }
    if (!found) throw WeightsError("weight file is missing record '" + nt.name + "'");
  }
}

}  // namespace foci
