#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lsattn/config.hpp"

using namespace lsattn;
namespace fs = std::filesystem;

namespace {

const char* kCli = LSATTN_CLI_PATH;

struct CmdResult {
  int exit_code;
  std::string out;
};

fs::path scratch() {
  static const fs::path p = [] {
    const fs::path d = fs::temp_directory_path() / "lsattn_cli_tests";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return p;
}

CmdResult run_cli(const std::string& args) {
  const fs::path out_file = scratch() / "cmd_out.txt";
  const std::string cmd =
      std::string(kCli) + " " + args + " > " + out_file.string() + " 2>&1";
  const int raw = std::system(cmd.c_str());
  CmdResult r;
  r.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  std::ifstream in(out_file);
  std::stringstream ss;
  ss << in.rdbuf();
  r.out = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// small config so CLI train runs take seconds
void write_tiny_config(const fs::path& path, const std::string& task) {
  Config c = Config::desk(task == "pose" ? TaskKind::pose : TaskKind::classification);
  c.model.hidden_channels = 8;
  c.model.bank_channels = 6;
  c.model.backbone_channels = {4, 6, 8, 10};
  c.model.n_steps = 2;
  c.model.n_classes = 2;
  c.train.crop = 16;
  c.train.batch = 4;
  c.train.steps = 8;
  c.train.checkpoint_every = 4;
  c.gumbel.decay_rate = 0.01;
  c.save(path.string());
}

}  // namespace

TEST_CASE("synth: writes datasets, reruns byte-identical, --n 0 warns") {
  const fs::path d1 = scratch() / "syn1";
  const auto r1 = run_cli("synth --task pose --out " + d1.string() + " --n 10 --seed 7 --size 16");
  CHECK(r1.exit_code == 0);
  CHECK(r1.out.find("10 examples") != std::string::npos);
  CHECK(fs::exists(d1 / "manifest.txt"));
  CHECK(fs::exists(d1 / "img" / "000009.pgm"));

  const fs::path d2 = scratch() / "syn2";
  run_cli("synth --task pose --out " + d2.string() + " --n 10 --seed 7 --size 16");
  CHECK(slurp(d1 / "manifest.txt") == slurp(d2 / "manifest.txt"));
  CHECK(slurp(d1 / "img" / "000005.pgm") == slurp(d2 / "img" / "000005.pgm"));

  const fs::path d0 = scratch() / "syn0";
  const auto r0 = run_cli("synth --task pose --out " + d0.string() + " --n 0 --seed 1 --size 16");
  CHECK(r0.exit_code == 0);
  CHECK(r0.out.find("warning") != std::string::npos);
}

TEST_CASE("train + eval: run directory populated, metrics printed, idempotent") {
  const fs::path cfg = scratch() / "tiny_pose.json";
  write_tiny_config(cfg, "pose");
  const fs::path data = scratch() / "pose_data";
  run_cli("synth --task pose --out " + data.string() + " --n 12 --seed 3 --size 16");

  const fs::path run = scratch() / "run1";
  const auto rt = run_cli("train --config " + cfg.string() + " --data " + data.string() +
                          " --out " + run.string() + " --seed 5");
  CHECK(rt.exit_code == 0);
  CHECK(fs::exists(run / "config.json"));
  CHECK(fs::exists(run / "metrics.csv"));
  CHECK(fs::exists(run / "checkpoints" / "last.ckpt"));
  CHECK(fs::exists(run / "checkpoints" / "ckpt_000004.bin"));

  // metrics.csv has the documented header and one row per step
  const std::string metrics = slurp(run / "metrics.csv");
  CHECK(metrics.rfind("step,loss,tau,clip_events\n", 0) == 0);

  // second train into the same dir is refused without --resume
  const auto refused = run_cli("train --config " + cfg.string() + " --data " +
                               data.string() + " --out " + run.string() + " --seed 5");
  CHECK(refused.exit_code == 2);

  const auto re = run_cli("eval --run " + run.string() + " --data " + data.string());
  CHECK(re.exit_code == 0);
  CHECK(re.out.find("median_position=") != std::string::npos);
  CHECK(re.out.find("median_orientation_deg=") != std::string::npos);
  CHECK(fs::exists(run / "traces.csv"));

  const auto re2 = run_cli("eval --run " + run.string() + " --data " + data.string());
  CHECK(re2.out == re.out);

  // determinism across full invocations: fresh run with the same seed
  const fs::path run2 = scratch() / "run1_again";
  run_cli("train --config " + cfg.string() + " --data " + data.string() + " --out " +
          run2.string() + " --seed 5");
  CHECK(slurp(run / "checkpoints" / "last.ckpt") ==
        slurp(run2 / "checkpoints" / "last.ckpt"));
  CHECK(slurp(run / "metrics.csv") == slurp(run2 / "metrics.csv"));

  // missing checkpoint name -> exit 2
  const auto missing = run_cli("eval --run " + run.string() + " --data " +
                               data.string() + " --checkpoint nope.ckpt");
  CHECK(missing.exit_code == 2);
}

TEST_CASE("spatial_only ablation shows a constant layer in traces.csv") {
  const fs::path data = scratch() / "pose_data_abl";
  run_cli("synth --task pose --out " + data.string() + " --n 8 --seed 4 --size 16");
  Config c = Config::desk(TaskKind::pose);
  c.model.hidden_channels = 8;
  c.model.bank_channels = 6;
  c.model.backbone_channels = {4, 6, 8, 10};
  c.model.n_steps = 2;
  c.model.ablation = "spatial_only";
  c.model.fixed_layer = 2;
  c.train.crop = 16;
  c.train.batch = 4;
  c.train.steps = 4;
  c.gumbel.decay_rate = 0.01;
  const fs::path cfg = scratch() / "abl.json";
  c.save(cfg.string());
  const fs::path run = scratch() / "abl_run";
  CHECK(run_cli("train --config " + cfg.string() + " --data " + data.string() +
                " --out " + run.string() + " --seed 6").exit_code == 0);
  CHECK(run_cli("eval --run " + run.string() + " --data " + data.string()).exit_code == 0);
  std::ifstream in(run / "traces.csv");
  std::string line;
  std::getline(in, line);  // header
  int rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++rows;
    std::stringstream ss(line);
    std::string example, step, selected;
    std::getline(ss, example, ',');
    std::getline(ss, step, ',');
    std::getline(ss, selected, ',');
    CHECK(selected == "2");
  }
  CHECK(rows == 8 * 2);

  // report-lsf puts 100% on the fixed layer
  const auto rl = run_cli("report-lsf --run " + run.string());
  CHECK(rl.exit_code == 0);
  CHECK(rl.out.find("layer 2 100.00%") != std::string::npos);
  const std::string csv = slurp(run / "reports" / "lsf.csv");
  CHECK(csv.find("2,100") != std::string::npos);
}

TEST_CASE("report-lsf: percentages sum to 100; missing traces exit 2") {
  const fs::path run = scratch() / "run1";  // from the earlier test
  const auto r = run_cli("report-lsf --run " + run.string());
  CHECK(r.exit_code == 0);
  const std::string csv = slurp(run / "reports" / "lsf.csv");
  std::stringstream ss(csv);
  std::string line;
  std::getline(ss, line);  // header
  double total = 0.0;
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    total += std::stod(line.substr(line.find(',') + 1));
  }
  CHECK(std::abs(total - 100.0) <= 1e-9);

  const fs::path empty_run = scratch() / "empty_run";
  fs::create_directories(empty_run);
  CHECK(run_cli("report-lsf --run " + empty_run.string()).exit_code == 2);
}

TEST_CASE("heatmaps: one heatmap and overlay per step, named by layer") {
  const fs::path run = scratch() / "run1";
  const fs::path data = scratch() / "pose_data";
  const auto r = run_cli("heatmaps --run " + run.string() + " --data " + data.string() +
                         " --example 0");
  CHECK(r.exit_code == 0);
  int heatmaps = 0, overlays = 0;
  for (const auto& e : fs::directory_iterator(run / "reports")) {
    const std::string name = e.path().filename().string();
    if (name.rfind("heatmap_step", 0) == 0) {
      ++heatmaps;
      CHECK(name.find("_layer") != std::string::npos);
    }
    if (name.rfind("overlay_step", 0) == 0) ++overlays;
  }
  CHECK(heatmaps == 2);  // n_steps in the tiny config
  CHECK(overlays == 2);

  const auto bad = run_cli("heatmaps --run " + run.string() + " --data " +
                           data.string() + " --example 999");
  CHECK(bad.exit_code == 2);
}

TEST_CASE("gradcheck command passes and prints a table") {
  const auto r = run_cli("gradcheck --seed 2");
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("op") != std::string::npos);
  CHECK(r.out.find("conv2d") != std::string::npos);
  CHECK(r.out.find("full_model.pose") != std::string::npos);
  CHECK(r.out.find("NO") == std::string::npos);
}

TEST_CASE("usage and config errors exit with code 2") {
  CHECK(run_cli("bogus-subcommand").exit_code == 2);
  CHECK(run_cli("train --config /nonexistent.json --data x --out y").exit_code == 2);

  // schema violation names the field
  const fs::path bad = scratch() / "bad.json";
  {
    std::ofstream out(bad);
    out << R"({"train": {"batch": 0}})";
  }
  const auto r = run_cli("train --config " + bad.string() + " --data x --out " +
                         (scratch() / "nowhere").string());
  CHECK(r.exit_code == 2);
  CHECK(r.out.find("train.batch") != std::string::npos);
}

TEST_CASE("class task eval prints mean_accuracy in [0,1]") {
  const fs::path cfg = scratch() / "tiny_class.json";
  write_tiny_config(cfg, "class");
  const fs::path data = scratch() / "class_data";
  run_cli("synth --task class --out " + data.string() +
          " --n 12 --seed 9 --size 16 --classes 2 --signal layout");
  const fs::path run = scratch() / "class_run";
  CHECK(run_cli("train --config " + cfg.string() + " --data " + data.string() +
                " --out " + run.string() + " --seed 2").exit_code == 0);
  const auto r = run_cli("eval --run " + run.string() + " --data " + data.string());
  CHECK(r.exit_code == 0);
  const size_t pos = r.out.find("mean_accuracy=");
  REQUIRE(pos != std::string::npos);
  const double acc = std::stod(r.out.substr(pos + 14));
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
}
