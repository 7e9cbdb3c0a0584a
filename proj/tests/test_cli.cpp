// End-to-end exercises of the command-line tool (runs the real binary).
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gtrans/config.hpp"

#ifndef GTRANS_CLI_PATH
#define GTRANS_CLI_PATH "gtrans"
#endif

namespace fs = std::filesystem;

namespace {

const char* kTinySets =
    " --set dataset.kind=synthetic"
    " --set dataset.synthetic.image_size=32"
    " --set dataset.synthetic.train_count=8"
    " --set dataset.synthetic.val_count=4"
    " --set dataset.synthetic.test_normal=3"
    " --set dataset.synthetic.test_anomalous=3"
    " --set dataset.synthetic.patch_size=8"
    " --set dataset.preprocess.resize_edge=32"
    " --set dataset.preprocess.crop_size=32"
    " --set dataset.preprocess.mean=[0.5,0.5,0.5]"
    " --set dataset.preprocess.std=[0.25,0.25,0.25]"
    " --set backbone.family=tiny_test"
    " --set tokenizer.groups=2"
    " --set tokenizer.dim=8"
    " --set training.batch_size=4"
    " --set score.sigma=2.0";

int run(const std::string& args) {
  std::string cmd = std::string(GTRANS_CLI_PATH) + " " + args + " >/dev/null 2>/dev/null";
  return std::system(cmd.c_str());
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int exit_code(int system_status) { return WEXITSTATUS(system_status); }

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("train, evaluate, calibrate, and ablate round-trip") {
  fs::path root = "/tmp/gtrans_cli_suite";
  fs::remove_all(root);
  fs::create_directories(root);
  std::string run_dir = (root / "run").string();

  REQUIRE(exit_code(run("train --config default --dataset synthetic --epochs 3 --out " + run_dir +
                        kTinySets)) == 0);
  CHECK(fs::exists(run_dir + "/checkpoint-synthetic.gtw"));
  CHECK(fs::exists(run_dir + "/config.json"));
  CHECK(fs::exists(run_dir + "/lambdas-synthetic.json"));
  std::string log = slurp(run_dir + "/trainlog-synthetic.csv");
  CHECK(log.rfind("epoch,train_loss,val_loss,lr", 0) == 0);
  int rows = 0;
  for (char c : log)
    if (c == '\n') ++rows;
  CHECK(rows == 4);  // header + 3 epochs

  SUBCASE("retraining with the same config and seed reproduces the log byte for byte") {
    std::string run2 = (root / "run2").string();
    REQUIRE(exit_code(run("train --config default --dataset synthetic --epochs 3 --out " + run2 +
                          kTinySets)) == 0);
    CHECK(slurp(run2 + "/trainlog-synthetic.csv") == log);
  }

  SUBCASE("evaluate writes reports and maps; repeated runs are byte-identical") {
    std::string ev1 = (root / "eval1").string();
    std::string ev2 = (root / "eval2").string();
    std::string eval_args =
        "evaluate --checkpoint " + run_dir + "/checkpoint-synthetic.gtw" + kTinySets;
    REQUIRE(exit_code(run(eval_args + " --out " + ev1 + " --emit-maps")) == 0);
    REQUIRE(exit_code(run(eval_args + " --out " + ev2)) == 0);
    CHECK(slurp(ev1 + "/report-synthetic.json") == slurp(ev2 + "/report-synthetic.json"));
    CHECK(fs::exists(ev1 + "/report-synthetic.csv"));
    CHECK(fs::exists(ev1 + "/scores-synthetic.csv"));
    int raw = 0, heat = 0, overlay = 0;
    for (const auto& entry : fs::directory_iterator(ev1 + "/maps")) {
      std::string name = entry.path().filename().string();
      if (name.ends_with(".gtm")) ++raw;
      if (name.ends_with("_heatmap.png")) ++heat;
      if (name.ends_with("_overlay.png")) ++overlay;
    }
    CHECK(raw == 6);
    CHECK(heat == 6);
    CHECK(overlay == 6);
  }

  SUBCASE("calibrate-lambda rewrites the checkpoint in place") {
    REQUIRE(exit_code(run("calibrate-lambda --checkpoint " + run_dir + "/checkpoint-synthetic.gtw" +
                          kTinySets)) == 0);
    CHECK(fs::exists(run_dir + "/lambdas-synthetic.json"));
  }

  SUBCASE("ablate modes produces one row per combination mode") {
    std::string csv_path = (root / "modes.csv").string();
    REQUIRE(exit_code(run("ablate --axis modes --checkpoint " + run_dir + "/checkpoint-synthetic.gtw" +
                          " --out " + csv_path + kTinySets)) == 0);
    std::string csv = slurp(csv_path);
    for (const char* mode : {"P1", "P2", "P3", "P4", "P5", "P6"})
      CHECK(csv.find(std::string("\n") + mode + ",") != std::string::npos);
  }

  SUBCASE("ablate weights produces the four coefficient rows") {
    std::string csv_path = (root / "weights.csv").string();
    REQUIRE(exit_code(run("ablate --axis weights --checkpoint " + run_dir + "/checkpoint-synthetic.gtw" +
                          " --out " + csv_path + kTinySets)) == 0);
    std::string csv = slurp(csv_path);
    for (const char* w : {"\n0.5,", "\nmse,", "\ncos,", "\nharmonic,"})
      CHECK(csv.find(w) != std::string::npos);
  }

  SUBCASE("ablate layers retrains per subset available on the backbone") {
    std::string csv_path = (root / "layers.csv").string();
    REQUIRE(exit_code(run("ablate --axis layers --train-variants --out " + csv_path +
                          " --set training.epochs=2" + kTinySets)) == 0);
    std::string csv = slurp(csv_path);
    CHECK(csv.find("\nlayers=1+2+3,") != std::string::npos);
    CHECK(csv.find("\nlayers=2+3,") != std::string::npos);
    CHECK(csv.find("layers=1+2+3+4") == std::string::npos);  // tiny_test has 3 stages
  }

  SUBCASE("make-synthetic output loads through the mvtec-layout loader") {
    std::string data_dir = (root / "data").string();
    REQUIRE(exit_code(run("make-synthetic --out " + data_dir + kTinySets)) == 0);
    gtrans::PreprocessConfig pp;
    pp.resize_edge = 32;
    pp.crop_size = 32;
    gtrans::DatasetSplit split =
        gtrans::load_mvtec_category(data_dir, "synthetic", pp, 0.8, 0);
    CHECK(split.train.size() + split.val.size() == 12);
    CHECK(split.test.size() == 6);
    int anomalous = 0;
    for (const auto& s : split.test)
      if (s.label == gtrans::Label::anomalous) {
        ++anomalous;
        CHECK(s.mask.sum() > 0);
      }
    CHECK(anomalous == 3);

    // the materialized tree drives the full file-based pipeline end to end
    std::string run_mvtec = (root / "run_mvtec").string();
    REQUIRE(exit_code(run("train --config default --epochs 2 --out " + run_mvtec + kTinySets +
                          " --set dataset.kind=mvtec --set dataset.category=synthetic"
                          " --set paths.data_root=" +
                          data_dir)) == 0);
    CHECK(fs::exists(run_mvtec + "/checkpoint-synthetic.gtw"));
    std::string ev = (root / "eval_mvtec").string();
    REQUIRE(exit_code(run("evaluate --checkpoint " + run_mvtec + "/checkpoint-synthetic.gtw" +
                          kTinySets +
                          " --set dataset.kind=mvtec --set dataset.category=synthetic"
                          " --set paths.data_root=" +
                          data_dir + " --out " + ev)) == 0);
    CHECK(fs::exists(ev + "/report-synthetic.json"));
  }
}

TEST_CASE("exit codes distinguish config and data errors") {
  CHECK(exit_code(run("train --set bogus.key=1")) == 2);
  CHECK(exit_code(run("train --config default --dataset mvtec --epochs 1"
                      " --set paths.data_root=/tmp/gtrans_missing_data")) == 3);
  CHECK(exit_code(run("evaluate --checkpoint /tmp/gtrans_missing.gtw" +
                      std::string(kTinySets))) == 3);
  CHECK(exit_code(run("ablate --axis nonsense --train-variants")) == 2);
}

}  // TEST_SUITE
