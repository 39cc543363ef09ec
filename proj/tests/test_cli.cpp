#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "vseg/volume.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "vseg_cli_test";

int run(const std::string& args, const std::string& out_name = "out.txt") {
  const std::string cmd = std::string(VSEG_CLI_PATH) + " " + args + " > " + (kRoot / out_name).string() + " 2> " +
                          (kRoot / (out_name + ".err")).string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string config_path() {
  const fs::path p = kRoot / "config.json";
  std::ofstream(p) << R"({
  "seed": 5,
  "synth": {"dims": [24, 24, 24], "n_regions": 3, "n_train": 2, "n_test": 1},
  "features": {"a": 5, "b": 13, "c": 5, "s": 2},
  "network": {"kernel": 3, "conv3d_maps": [2], "ortho_maps": [2, 3], "down_maps": [2], "hidden": [8]},
  "training": {"train_per_atlas": 60, "val_per_atlas": 20, "batch_size": 20, "max_epochs": 2},
  "inference": {"max_iters": 3}
})";
  return p.string();
}

}  // namespace

TEST_CASE("command line workflow end to end") {
  fs::remove_all(kRoot);
  fs::create_directories(kRoot);
  const std::string cfg = "--quiet --config " + config_path();
  const std::string data = (kRoot / "data").string();

  REQUIRE(run("gen-synth " + cfg + " --out " + data) == 0);
  CHECK(fs::exists(kRoot / "data" / "manifest.json"));
  REQUIRE(run("gen-synth " + cfg + " --out " + (kRoot / "data2").string()) == 0);
  CHECK(read_file(kRoot / "data" / "subject_000_image.vol") == read_file(kRoot / "data2" / "subject_000_image.vol"));

  const std::string m1 = (kRoot / "s1.model").string(), m2 = (kRoot / "full.model").string();
  REQUIRE(run("train " + cfg + " --data " + data + " --out " + m1 + " --stage 1") == 0);
  REQUIRE(run("train " + cfg + " --data " + data + " --out " + m2 + " --stage full") == 0);
  CHECK(read_file(m1 + ".history.csv").rfind("epoch,train_loss,val_error,elapsed_s\n", 0) == 0);
  CHECK(read_file(m1).find("use_centroids 0") != std::string::npos);
  CHECK(read_file(m2).find("use_centroids 1") != std::string::npos);

  const std::string vol = data + "/subject_002_image.vol", truth = data + "/subject_002_labels.lbl";
  const std::string seg = (kRoot / "seg.lbl").string();
  REQUIRE(run("segment " + cfg + " --stage1 " + m1 + " --full " + m2 + " --volume " + vol + " --out " + seg) == 0);
  CHECK(vseg::load_labels(seg).dims() == vseg::load_volume(vol).dims());
  const auto report = nlohmann::json::parse(read_file(seg + ".report.json"));
  CHECK(report.contains("rounds"));
  CHECK(report.at("changed_fractions").size() == report.at("rounds").get<std::size_t>());
  CHECK(report.at("seed") == 5);
  CHECK(report.at("config").at("synth").at("n_regions") == 3);

  const std::string seg0 = (kRoot / "seg0.lbl").string();
  REQUIRE(run("segment " + cfg + " --stage1 " + m1 + " --volume " + vol + " --out " + seg0 + " --max-iters 0") == 0);
  CHECK(nlohmann::json::parse(read_file(seg0 + ".report.json")).at("rounds") == 0);

  REQUIRE(run("evaluate --pred " + truth + " --truth " + truth + " --regions 3", "eval.txt") == 0);
  const std::string eval = read_file(kRoot / "eval.txt");
  CHECK(eval.rfind("region,dice,true_count,pred_count\n", 0) == 0);
  CHECK(eval.find("mean_dice=1 error_rate=0") != std::string::npos);
  fs::remove_all(kRoot);
}

TEST_CASE("command line errors map to exit codes") {
  fs::create_directories(kRoot);
  CHECK(run("") == 1);
  CHECK(run("frobnicate") == 1);
  CHECK(run("gen-synth") == 1);
  CHECK(run("gen-synth --out " + (kRoot / "x").string() + " --set synth.n_regions=0") == 1);
  CHECK(run("gen-synth --out " + (kRoot / "x").string() + " --set bogus=1") == 1);
  CHECK(run("gen-synth --out /proc/vseg_cannot_write") == 2);
  CHECK(run("train --data " + (kRoot / "missing").string() + " --out " + (kRoot / "m").string()) == 2);

  vseg::save_labels(vseg::LabelVolume({2, 2, 2}), kRoot / "a.lbl");
  vseg::save_labels(vseg::LabelVolume({2, 2, 3}), kRoot / "b.lbl");
  CHECK(run("evaluate --pred " + (kRoot / "a.lbl").string() + " --truth " + (kRoot / "b.lbl").string() +
            " --regions 2") != 0);
  fs::remove_all(kRoot);
}
