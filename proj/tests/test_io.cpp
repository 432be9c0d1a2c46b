#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "foci/annotations.hpp"
#include "foci/image.hpp"
#include "foci/rng.hpp"
#include "foci/weights_io.hpp"

using foci::ImageAnnotation;
using foci::ImageU8;
using foci::Rng;
using foci::Tensor;
using foci::WeightRecord;
using foci::WeightsFile;

namespace {

namespace fs = std::filesystem;

ImageU8 test_image(int w, int h) {
  ImageU8 img;
  img.width = w;
  img.height = h;
  img.pixels.resize(static_cast<std::size_t>(w) * h);
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    img.pixels[i] = static_cast<std::uint8_t>((i * 37) % 256);
  return img;
}

std::string error_text(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

WeightsFile sample_weights(bool with_opts) {
  WeightsFile file;
  WeightRecord a;
  a.name = "layer.weight";
  a.extents = {2, 3, 1, 1};
  a.values = {0.5f, -1.25f, 2.0f, 0.0f, 3.5f, -0.125f};
  WeightRecord b;
  b.name = "layer.bias";
  b.extents = {1, 2, 1, 1};
  b.values = {0.25f, -0.75f};
  file.params = {a, b};
  if (with_opts) {
    WeightRecord step;
    step.name = "adam.step";
    step.extents = {1};
    step.values = {4.0f};
    file.has_opts = true;
    file.opts = {step};
  }
  return file;
}

}  // namespace

TEST_CASE("pgm encodes the golden header and round-trips") {
  auto img = test_image(2, 3);
  const std::string bytes = foci::encode_pgm(img);
  CHECK(bytes.substr(0, 11) == "P5\n2 3\n255\n");
  CHECK(bytes.size() == 11 + 6);

  auto back = foci::decode_pgm(bytes);
  CHECK(back.width == 2);
  CHECK(back.height == 3);
  CHECK(back.pixels == img.pixels);
  CHECK(foci::encode_pgm(back) == bytes);
}

TEST_CASE("pgm file io round-trips") {
  const fs::path path = fs::temp_directory_path() / "foci_test_roundtrip.pgm";
  auto img = test_image(17, 9);
  foci::write_pgm(path.string(), img);
  auto back = foci::read_pgm(path.string());
  CHECK(back.width == img.width);
  CHECK(back.height == img.height);
  CHECK(back.pixels == img.pixels);
  fs::remove(path);

  CHECK_THROWS(foci::read_pgm((fs::temp_directory_path() / "foci_missing.pgm").string()));
}

TEST_CASE("pgm rejects malformed input with named errors") {
  auto img = test_image(2, 2);
  std::string good = foci::encode_pgm(img);

  std::string ascii = good;
  ascii[1] = '2';  // P5 -> P2
  CHECK_THROWS_AS(foci::decode_pgm(ascii), foci::PgmFormatError);
  CHECK(error_text([&] { foci::decode_pgm(ascii); }).find("magic 'P5' missing") !=
        std::string::npos);

  std::string short_raster = good.substr(0, good.size() - 1);
  CHECK_THROWS_AS(foci::decode_pgm(short_raster), foci::PgmFormatError);
  CHECK(error_text([&] { foci::decode_pgm(short_raster); }).find("raster truncated (3 of 4 bytes)") !=
        std::string::npos);

  std::string long_raster = good + "x";
  CHECK(error_text([&] { foci::decode_pgm(long_raster); }).find("trailing bytes after raster") !=
        std::string::npos);

  std::string odd_maxval = "P5\n2 2\n128\n" + std::string(4, 'a');
  CHECK(error_text([&] { foci::decode_pgm(odd_maxval); }).find("unsupported maxval 128") !=
        std::string::npos);

  // header ends right at the maxval token: no separator byte at all
  CHECK(error_text([&] { foci::decode_pgm("P5\n2 2\n255"); })
            .find("missing whitespace after maxval") != std::string::npos);

  CHECK_THROWS_AS(foci::decode_pgm("P5\n2"), foci::PgmFormatError);
  CHECK(error_text([&] { foci::decode_pgm("P5\nx 2\n255\n"); }).find("non-numeric") !=
        std::string::npos);
}

TEST_CASE("pgm tolerates comments and varied whitespace in the header") {
  std::string text = "P5 # binary pgm\n# full-line comment\n 2\t2 # extents\n255\n";
  text += std::string(4, 'z');
  auto img = foci::decode_pgm(text);
  CHECK(img.width == 2);
  CHECK(img.height == 2);
  CHECK(img.pixels == std::vector<std::uint8_t>(4, static_cast<std::uint8_t>('z')));
}

TEST_CASE("image_to_tensor scales to the unit interval") {
  ImageU8 img;
  img.width = 2;
  img.height = 1;
  img.pixels = {0, 255};
  auto t = foci::image_to_tensor<double>(img);
  CHECK(t.shape() == foci::Shape4{1, 1, 1, 2});
  CHECK(t.at(0, 0, 0, 0) == 0.0);
  CHECK(t.at(0, 0, 0, 1) == 1.0);
}

TEST_CASE("annotations round-trip and preserve box values") {
  std::vector<ImageAnnotation> anns(2);
  anns[0].image = "img_00000.pgm";
  anns[0].boxes.push_back({{0.25, 0.5, 0.125, 0.25}, 0});
  anns[0].boxes.push_back({{0.75, 0.75, 0.0625, 0.0625}, 0});
  anns[1].image = "img_00001.pgm";

  const std::string text = foci::format_annotations(anns);
  auto back = foci::parse_annotations(text);
  REQUIRE(back.size() == 2);
  CHECK(back[0].image == "img_00000.pgm");
  REQUIRE(back[0].boxes.size() == 2);
  CHECK(back[0].boxes[0].box.cx == 0.25);
  CHECK(back[0].boxes[1].box.w == 0.0625);
  CHECK(back[1].boxes.empty());
  CHECK(foci::format_annotations(back) == text);

  // one JSON object per line
  CHECK(std::count(text.begin(), text.end(), '\n') == 2);

  const fs::path path = fs::temp_directory_path() / "foci_test_annotations.jsonl";
  foci::write_annotations(path.string(), anns);
  auto from_file = foci::read_annotations(path.string());
  REQUIRE(from_file.size() == 2);
  CHECK(from_file[0].boxes[0].box.cy == 0.5);
  fs::remove(path);
}

TEST_CASE("annotation errors carry the origin and line number") {
  const std::string ok = R"({"image": "a.pgm", "boxes": []})";

  auto text = ok + "\nnot json\n";
  auto msg = error_text([&] { foci::parse_annotations(text, "test.jsonl"); });
  CHECK(msg.find("test.jsonl:2:") != std::string::npos);
  CHECK(msg.find("invalid JSON") != std::string::npos);

  auto missing = ok + "\n" + R"({"image": "b.pgm"})" + "\n";
  msg = error_text([&] { foci::parse_annotations(missing, "test.jsonl"); });
  CHECK(msg.find("test.jsonl:2:") != std::string::npos);
  CHECK(msg.find("\"image\" and \"boxes\"") != std::string::npos);

  auto bad_box = ok + "\n" +
                 R"({"image": "b.pgm", "boxes": [{"cx": 1.5, "cy": 0.5, "w": 0.2, "h": 0.2, "class": 0}]})" +
                 "\n";
  msg = error_text([&] { foci::parse_annotations(bad_box, "test.jsonl"); });
  CHECK(msg.find(":2:") != std::string::npos);
  CHECK(msg.find("normalized-coordinate bounds") != std::string::npos);

  auto bad_class = R"({"image": "b.pgm", "boxes": [{"cx": 0.5, "cy": 0.5, "w": 0.2, "h": 0.2, "class": -1}]})";
  msg = error_text([&] { foci::parse_annotations(bad_class, "test.jsonl"); });
  CHECK(msg.find("negative class id") != std::string::npos);

  // blank lines are fine and do not shift the numbering
  auto spaced = ok + "\n\n" + ok + "\n";
  CHECK(foci::parse_annotations(spaced).size() == 2);
}

TEST_CASE("weights encode and decode byte-exactly, with and without OPTS") {
  for (bool with_opts : {false, true}) {
    auto file = sample_weights(with_opts);
    const std::string bytes = foci::encode_weights(file);
    CHECK(bytes.substr(0, 4) == "FOCI");

    auto back = foci::decode_weights(bytes);
    CHECK(back.version == foci::kWeightsVersion);
    REQUIRE(back.params.size() == 2);
    CHECK(back.params[0].name == "layer.weight");
    CHECK(back.params[0].extents == std::vector<std::uint32_t>{2, 3, 1, 1});
    CHECK(back.params[0].values == file.params[0].values);
    CHECK(back.has_opts == with_opts);
    if (with_opts) {
      REQUIRE(back.opts.size() == 1);
      CHECK(back.opts[0].name == "adam.step");
      CHECK(back.opts[0].extents == std::vector<std::uint32_t>{1});
    }
    CHECK(foci::encode_weights(back) == bytes);
  }

  const fs::path path = fs::temp_directory_path() / "foci_test_weights.bin";
  foci::write_weights(path.string(), sample_weights(true));
  auto file = foci::read_weights(path.string());
  CHECK(file.has_opts);
  fs::remove(path);
}

TEST_CASE("weights reject bad magic and unknown versions") {
  CHECK_THROWS_AS(foci::decode_weights(""), foci::BadMagicError);
  CHECK_THROWS_AS(foci::decode_weights("FOC"), foci::BadMagicError);
  CHECK_THROWS_AS(foci::decode_weights("JUNKJUNKJUNK"), foci::BadMagicError);

  auto bytes = foci::encode_weights(sample_weights(false));
  bytes[4] = 2;  // little-endian version field
  CHECK_THROWS_AS(foci::decode_weights(bytes), foci::UnknownVersionError);
  CHECK(error_text([&] { foci::decode_weights(bytes); })
            .find("unknown format version 2 (this build reads 1)") != std::string::npos);
}

TEST_CASE("every strict prefix fails except the params-section boundary") {
  auto file = sample_weights(true);
  const std::string bytes = foci::encode_weights(file);
  const std::size_t params_end = foci::encode_weights(sample_weights(false)).size();
  REQUIRE(params_end < bytes.size());

  for (std::size_t len = 0; len < bytes.size(); ++len) {
    const std::string prefix = bytes.substr(0, len);
    if (len < 4) {
      CHECK_THROWS_AS(foci::decode_weights(prefix), foci::BadMagicError);
    } else if (len == params_end) {
      auto partial = foci::decode_weights(prefix);
      CHECK(partial.params.size() == 2);
      CHECK(!partial.has_opts);
    } else {
      CHECK_THROWS_AS(foci::decode_weights(prefix), foci::TruncatedFileError);
    }
  }
}

TEST_CASE("weights reject structural garbage") {
  auto bytes = foci::encode_weights(sample_weights(true));
  CHECK(error_text([&] { foci::decode_weights(bytes + "x"); })
            .find("trailing bytes after the last section") != std::string::npos);

  auto params_only = foci::encode_weights(sample_weights(false));
  CHECK(error_text([&] { foci::decode_weights(params_only + "WXYZ"); })
            .find("unknown section tag 'WXYZ'") != std::string::npos);

  // implausible rank: patch the first record's rank field
  WeightsFile file;
  WeightRecord rec;
  rec.name = "r";
  rec.extents = std::vector<std::uint32_t>(9, 1);  // rank 9 > 8
  rec.values = {0.0f};
  file.params = {rec};
  CHECK(error_text([&] { foci::decode_weights(foci::encode_weights(file)); })
            .find("implausible rank") != std::string::npos);

  WeightsFile zero;
  WeightRecord zrec;
  zrec.name = "z";
  zrec.extents = {2, 0};
  zero.params = {zrec};
  CHECK(error_text([&] { foci::decode_weights(foci::encode_weights(zero)); })
            .find("has a zero extent") != std::string::npos);
}

TEST_CASE("record/tensor bridges check shapes and names") {
  auto t = Tensor<double>::from_values({1, 2, 1, 2}, {1.5, -2.25, 0.5, 3.0});
  auto rec = foci::tensor_to_record("param", t);
  CHECK(rec.extents == std::vector<std::uint32_t>{1, 2, 1, 2});
  CHECK(rec.values == std::vector<float>{1.5f, -2.25f, 0.5f, 3.0f});

  Tensor<double> dst(1, 2, 1, 2);
  foci::record_to_tensor(rec, dst);
  CHECK(dst.values() == t.values());

  Tensor<double> wrong_h(1, 2, 3, 2);
  auto msg = error_text([&] { foci::record_to_tensor(rec, wrong_h); });
  CHECK(msg.find("dimension h is 1, model expects 3") != std::string::npos);

  WeightRecord rank3 = rec;
  rank3.extents = {1, 2, 2};
  msg = error_text([&] { foci::record_to_tensor(rank3, dst); });
  CHECK(msg.find("rank 3, expected 4") != std::string::npos);

  std::vector<foci::NamedTensor<double>> model;
  model.push_back({"a", Tensor<double>(1, 1, 1, 1), true});
  model.push_back({"b", Tensor<double>(1, 1, 1, 1), true});
  std::vector<WeightRecord> recs = {foci::tensor_to_record("a", Tensor<double>::full({1, 1, 1, 1}, 2.0)),
                                    foci::tensor_to_record("b", Tensor<double>::full({1, 1, 1, 1}, 3.0))};
  foci::records_to_tensors(recs, model);
  CHECK(model[0].tensor.item() == 2.0);
  CHECK(model[1].tensor.item() == 3.0);

  std::vector<WeightRecord> extra = recs;
  extra.push_back(foci::tensor_to_record("c", Tensor<double>(1, 1, 1, 1)));
  msg = error_text([&] { foci::records_to_tensors(extra, model); });
  CHECK(msg.find("weight file has 3 records, model has 2 tensors") != std::string::npos);

  std::vector<WeightRecord> renamed = recs;
  renamed[1].name = "z";
  msg = error_text([&] { foci::records_to_tensors(renamed, model); });
  CHECK(msg.find("missing record 'b'") != std::string::npos);
}
