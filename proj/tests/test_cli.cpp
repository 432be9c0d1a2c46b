// Shells out to the installed command-line binary and checks exit codes,
// stdout/stderr text, and the files each subcommand leaves behind.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#ifndef FOCI_CLI_PATH
#error "FOCI_CLI_PATH must point at the CLI binary"
#endif

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  REQUIRE(out.good());
  out << text;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("foci_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

RunResult run_cli(const TempDir& tmp, const std::string& args) {
  const fs::path out_file = tmp.path / "stdout.txt";
  const fs::path err_file = tmp.path / "stderr.txt";
  const std::string cmd = std::string(FOCI_CLI_PATH) + " " + args + " > '" + out_file.string() +
                          "' 2> '" + err_file.string() + "'";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out_file);
  r.err = slurp(err_file);
  return r;
}

// 16px network, one anchor, tiny synth images: fast enough to train in tests.
std::string tiny_config_text() {
  return
      "[network]\n"
      "input_resolution = 16\n"
      "widths = 2, 2, 4, 4, 8, 8\n"
      "fpn_width = 2\n"
      "head_channels = 4\n"
      "anchors = 0.5x0.5\n"
      "[train]\n"
      "learning_rate = 0.001\n"
      "batch_size = 2\n"
      "epochs = 2\n"
      "seed = 3\n"
      "[synth]\n"
      "image_size = 16\n"
      "count_min = 1\n"
      "count_max = 2\n"
      "radius_min = 2\n"
      "radius_max = 3\n"
      "min_spacing = 4\n"
      "seed = 9\n"
      "[eval]\n"
      "conf_threshold = 0.1\n";
}

}  // namespace

TEST_CASE("gen, train, infer and eval chain together") {
  TempDir tmp;
  const fs::path cfg_path = tmp.path / "tiny.cfg";
  spit(cfg_path, tiny_config_text());
  const std::string base = "--config '" + cfg_path.string() + "'";
  const fs::path data_dir = tmp.path / "data";

  // gen
  auto gen = run_cli(tmp, base + " gen --out '" + data_dir.string() + "' --count 6");
  CAPTURE(gen.err);
  REQUIRE(gen.exit_code == 0);
  CHECK(gen.out.find("manifest.json") != std::string::npos);
  CHECK(fs::exists(data_dir / "manifest.json"));
  CHECK(fs::exists(data_dir / "annotations.jsonl"));
  CHECK(fs::exists(data_dir / "img_00000.pgm"));
  CHECK(fs::exists(data_dir / "img_00005.pgm"));

  // a second gen without --force must refuse, with --force it may proceed
  auto refused = run_cli(tmp, base + " gen --out '" + data_dir.string() + "' --count 6");
  CHECK(refused.exit_code == 1);
  CHECK(refused.err.find("pass --force") != std::string::npos);
  auto forced = run_cli(tmp, base + " gen --out '" + data_dir.string() + "' --count 6 --force");
  CHECK(forced.exit_code == 0);

  // train
  const fs::path weights = tmp.path / "model.foci";
  auto train = run_cli(tmp, base + " train --data '" + data_dir.string() + "' --out '" +
                                weights.string() + "'");
  CAPTURE(train.err);
  REQUIRE(train.exit_code == 0);
  CHECK(train.out.find("epoch 1/2 loss ") != std::string::npos);
  CHECK(train.out.find("epoch 2/2 loss ") != std::string::npos);
  CHECK(train.out.find("weights " + weights.string()) != std::string::npos);
  REQUIRE(fs::exists(weights));
  const std::string history = slurp(fs::path(weights.string() + ".history"));
  CHECK(history.find("epoch 1 loss ") == 0);
  CHECK(history.find("epoch 2 loss ") != std::string::npos);

  // infer with threshold zero: the 1x1 grid and single anchor yield exactly
  // one detection, so the line format is pinned down
  auto infer = run_cli(tmp, base + " infer --weights '" + weights.string() + "' --image '" +
                                (data_dir / "img_00000.pgm").string() + "' --conf 0");
  CAPTURE(infer.err);
  CAPTURE(infer.out);
  REQUIRE(infer.exit_code == 0);
  CHECK(infer.out.find("Cell: ") == 0);
  CHECK(infer.out.find(" 1 cx=") != std::string::npos);
  CHECK(infer.out.find(" cy=") != std::string::npos);
  CHECK(infer.out.find(" w=") != std::string::npos);
  CHECK(infer.out.find(" h=") != std::string::npos);
  CHECK(infer.out.find("count 1\n") != std::string::npos);

  // eval
  const fs::path report = tmp.path / "report.json";
  auto eval = run_cli(tmp, base + " eval --weights '" + weights.string() + "' --data '" +
                               data_dir.string() + "' --report '" + report.string() + "'");
  CAPTURE(eval.err);
  REQUIRE(eval.exit_code == 0);
  CHECK(eval.out.find("mAP@0.25 ") != std::string::npos);
  CHECK(eval.out.find("max_recall ") != std::string::npos);
  CHECK(eval.out.find("report " + report.string()) != std::string::npos);
  const std::string report_text = slurp(report);
  CHECK(report_text.find("\"map\"") != std::string::npos);
  CHECK(report_text.find("\"classes\"") != std::string::npos);
}

TEST_CASE("a missing config file exits 1 and names the path") {
  TempDir tmp;
  const std::string missing = (tmp.path / "nope.cfg").string();
  auto r = run_cli(tmp, "--config '" + missing + "' gen --out '" +
                            (tmp.path / "d").string() + "' --count 1");
  CHECK(r.exit_code == 1);
  CHECK(r.err.find("cannot open config file") != std::string::npos);
  CHECK(r.err.find(missing) != std::string::npos);
}

TEST_CASE("training with zero epochs is the seeded init, reproducibly") {
  TempDir tmp;
  const fs::path cfg_path = tmp.path / "tiny.cfg";
  spit(cfg_path, tiny_config_text());
  const std::string base = "--config '" + cfg_path.string() + "'";
  const fs::path data_dir = tmp.path / "data";
  REQUIRE(run_cli(tmp, base + " gen --out '" + data_dir.string() + "' --count 2").exit_code == 0);

  const fs::path w1 = tmp.path / "a.foci";
  const fs::path w2 = tmp.path / "b.foci";
  auto r1 = run_cli(tmp, base + " train --data '" + data_dir.string() + "' --out '" +
                             w1.string() + "' --epochs 0");
  auto r2 = run_cli(tmp, base + " train --data '" + data_dir.string() + "' --out '" +
                             w2.string() + "' --epochs 0");
  REQUIRE(r1.exit_code == 0);
  REQUIRE(r2.exit_code == 0);
  CHECK(slurp(w1) == slurp(w2));
  CHECK(slurp(fs::path(w1.string() + ".history")).empty());
}

TEST_CASE("a corrupt annotation line is reported with its line number") {
  TempDir tmp;
  const fs::path cfg_path = tmp.path / "tiny.cfg";
  spit(cfg_path, tiny_config_text());
  const std::string base = "--config '" + cfg_path.string() + "'";
  const fs::path data_dir = tmp.path / "data";
  REQUIRE(run_cli(tmp, base + " gen --out '" + data_dir.string() + "' --count 3").exit_code == 0);

  // replace the second line with garbage
  const fs::path ann = data_dir / "annotations.jsonl";
  std::string text = slurp(ann);
  const std::size_t first_nl = text.find('\n');
  const std::size_t second_nl = text.find('\n', first_nl + 1);
  REQUIRE(first_nl != std::string::npos);
  REQUIRE(second_nl != std::string::npos);
  spit(ann, text.substr(0, first_nl + 1) + "not json" + text.substr(second_nl));

  auto r = run_cli(tmp, base + " train --data '" + data_dir.string() + "' --out '" +
                            (tmp.path / "w.foci").string() + "'");
  CHECK(r.exit_code == 1);
  CHECK(r.err.find(":2:") != std::string::npos);
  CHECK(r.err.find("invalid JSON") != std::string::npos);
}

TEST_CASE("a diverging run exits 2") {
  TempDir tmp;
  // nan slips past the positivity check and poisons the first Adam step; the
  // second batch then sees a non-finite loss
  std::string cfg_text = tiny_config_text();
  const std::string key = "learning_rate = 0.001";
  cfg_text.replace(cfg_text.find(key), key.size(), "learning_rate = nan");
  const fs::path cfg_path = tmp.path / "nan.cfg";
  spit(cfg_path, cfg_text);
  const std::string base = "--config '" + cfg_path.string() + "'";
  const fs::path data_dir = tmp.path / "data";
  REQUIRE(run_cli(tmp, base + " gen --out '" + data_dir.string() + "' --count 4").exit_code == 0);

  auto r = run_cli(tmp, base + " train --data '" + data_dir.string() + "' --out '" +
                            (tmp.path / "w.foci").string() + "'");
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("non-finite loss") != std::string::npos);
}

TEST_CASE("bad usage fails without touching the filesystem") {
  TempDir tmp;
  auto r = run_cli(tmp, "train --data x");  // missing required --out, no config
  CHECK(r.exit_code != 0);
}
