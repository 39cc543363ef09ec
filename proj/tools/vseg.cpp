// vseg: synthetic data generation, two-stage training, refined segmentation
// and evaluation from the command line.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

#include <CLI11.hpp>

#include <chrono>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "vseg/features.hpp"
#include "vseg/inference.hpp"
#include "vseg/log.hpp"
#include "vseg/metrics.hpp"
#include "vseg/run_config.hpp"
#include "vseg/segnet.hpp"
#include "vseg/synthdata.hpp"
#include "vseg/training.hpp"
#include "vseg/volume.hpp"

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

/// Options every command accepts; flags become overrides applied after --set.
struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  bool quiet = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON run configuration (defaults apply when omitted)");
    cmd->add_option("--set", sets, "Override a config key, e.g. --set training.max_epochs=5")->take_all();
    cmd->add_option("--seed", seed, "Master seed");
    cmd->add_option("--threads", threads, "Worker threads; 1 is bit-reproducible");
    cmd->add_flag("--quiet", quiet, "Only print warnings and errors");
  }

  vseg::RunConfig load(std::vector<std::string> extra = {}) const {
    std::vector<std::string> all = sets;
    if (seed) all.push_back("seed=" + std::to_string(*seed));
    if (threads) all.push_back("threads=" + std::to_string(*threads));
    all.insert(all.end(), extra.begin(), extra.end());
    return vseg::load_run_config(config_path, all);
  }
};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string require(const std::string& flag_value, const std::string& config_value, const char* what) {
  if (!flag_value.empty()) return flag_value;
  if (!config_value.empty()) return config_value;
  throw UsageError(std::string("missing ") + what);
}

int cmd_gen_synth(const Common& common, const std::string& out_dir) {
  const auto cfg = common.load();
  const auto manifest = vseg::write_dataset(cfg.synth, out_dir, cfg.threads);
  std::cout << "wrote " << manifest.subjects.size() << " subjects to " << out_dir << '\n';
  return 0;
}

int cmd_train(const Common& common, const std::string& data_flag, const std::string& out_model,
              const std::string& stage, std::string history_path) {
  const bool full = stage == "full";
  if (!full && stage != "1") throw UsageError("--stage must be 1 or full");
  const auto cfg = common.load();
  const std::string data_dir = require(data_flag, cfg.paths.data_dir, "--data");
  const auto manifest = vseg::read_manifest(data_dir);
  if (manifest.config.n_regions != cfg.network.features.n_regions) {
    throw UsageError("dataset has " + std::to_string(manifest.config.n_regions) + " regions but features.n_regions is " +
                     std::to_string(cfg.network.features.n_regions));
  }
  const auto atlases = vseg::load_split(data_dir, manifest, "train");
  if (atlases.empty()) throw std::runtime_error("dataset " + data_dir + " has no training subjects");

  const vseg::NetworkConfig net = cfg.network_for(full);
  vseg::Rng sample_rng(cfg.sampling_seed(full));
  auto [train_set, val_set] = vseg::sample_split(atlases, cfg.sampling.train_per_atlas, cfg.sampling.val_per_atlas,
                                                 net.features, full, sample_rng, cfg.threads);
  vseg::Rng init_rng(cfg.init_seed(full));
  auto model = vseg::build(net, full, init_rng);
  vseg::log_info("training " + std::string(full ? "full" : "stage-1") + " network with " +
                 std::to_string(model.parameter_count()) + " parameters on " + std::to_string(train_set.size()) +
                 " datapoints");
  const auto result = vseg::train(std::move(model), train_set, val_set, cfg.training_for(full));
  vseg::save_model(result.model, out_model);
  if (history_path.empty()) history_path = out_model + ".history.csv";
  vseg::write_history_csv(result.history, history_path);
  std::cout << "best_epoch=" << result.best_epoch << " best_val_error=" << result.best_val_error
            << " epochs=" << result.history.size() << '\n';
  return 0;
}

int cmd_segment(const Common& common, const std::string& stage1_flag, const std::string& full_flag,
                const std::string& volume_path, const std::string& out_path, std::string report_path,
                std::optional<std::size_t> max_iters, std::optional<double> eps, const std::string& prob_path) {
  std::vector<std::string> extra;
  if (max_iters) extra.push_back("inference.max_iters=" + std::to_string(*max_iters));
  if (eps) extra.push_back("inference.eps=" + std::to_string(*eps));
  const auto cfg = common.load(extra);
  const auto stage1 = vseg::load_model(require(stage1_flag, cfg.paths.stage1_model, "--stage1"));
  const vseg::Volume v = vseg::load_volume(volume_path);
  const vseg::Mask mask = vseg::mask_from_intensity(v);

  vseg::InferenceOptions opts;
  opts.block_size = cfg.inference.block_size;
  opts.threads = cfg.threads;
  opts.keep_probabilities = !prob_path.empty();
  const vseg::FeatureConfig& features = stage1.config().features;

  vseg::SegmentationResult result;
  if (cfg.inference.max_iters == 0) {
    vseg::Volume probs;
    const auto start = std::chrono::steady_clock::now();
    result.labels = vseg::segment_once(stage1, v, features, nullptr, mask, opts,
                                       opts.keep_probabilities ? &probs : nullptr);
    result.initial_labels = result.labels;
    result.converged = true;
    if (opts.keep_probabilities) result.probabilities = std::move(probs);
    result.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  } else {
    const auto full = vseg::load_model(require(full_flag, cfg.paths.full_model, "--full"));
    if (!(full.config().features == features)) throw UsageError("stage-1 and full models use different features");
    result = vseg::segment_refined(stage1, full, v, features, mask, cfg.inference.max_iters, cfg.inference.eps, opts);
  }
  vseg::save_labels(result.labels, out_path);
  if (result.probabilities) vseg::save_volume(*result.probabilities, prob_path);
  if (report_path.empty()) report_path = out_path + ".report.json";
  std::ofstream report(report_path, std::ios::trunc);
  if (!report) throw std::runtime_error("cannot write " + report_path);
  report << vseg::run_report_json(result, cfg.seed, vseg::run_config_to_json(cfg));
  std::cout << "rounds=" << result.iterations << " converged=" << (result.converged ? "true" : "false") << '\n';
  return 0;
}

int cmd_evaluate(const Common& common, const std::string& pred_path, const std::string& truth_path,
                 std::optional<std::size_t> regions) {
  const auto cfg = common.load();
  const std::size_t n = regions ? *regions : cfg.synth.n_regions;
  const auto pred = vseg::load_labels(pred_path);
  const auto truth = vseg::load_labels(truth_path);
  if (!(pred.dims() == truth.dims())) throw UsageError("prediction and truth dimensions differ");
  const auto report = vseg::evaluate(pred, truth, n);
  std::cout << report.to_csv();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vseg: volumetric segmentation with a multi-pathway convolutional network"};
  app.require_subcommand(1);

  Common common;

  std::string out_dir;
  auto* gen = app.add_subcommand("gen-synth", "Generate a synthetic atlas dataset");
  common.attach(gen);
  gen->add_option("--out", out_dir, "Output directory")->required();

  std::string data_dir, model_out, stage = "1", history;
  auto* train = app.add_subcommand("train", "Train the stage-1 or the full network");
  common.attach(train);
  train->add_option("--data", data_dir, "Dataset directory with manifest.json");
  train->add_option("--out", model_out, "Output model file")->required();
  train->add_option("--stage", stage, "1 (no centroid pathway) or full")->check(CLI::IsMember({"1", "full"}));
  train->add_option("--history", history, "History CSV path (default: <out>.history.csv)");

  std::string stage1_model, full_model, volume_path, labels_out, report_path, prob_path;
  std::optional<std::size_t> max_iters;
  std::optional<double> eps;
  auto* segment = app.add_subcommand("segment", "Segment a volume with centroid refinement");
  common.attach(segment);
  segment->add_option("--stage1", stage1_model, "Stage-1 model file");
  segment->add_option("--full", full_model, "Full model file (unused when --max-iters 0)");
  segment->add_option("--volume", volume_path, "Input volume")->required();
  segment->add_option("--out", labels_out, "Output label file")->required();
  segment->add_option("--report", report_path, "Run report JSON (default: <out>.report.json)");
  segment->add_option("--max-iters", max_iters, "Refinement rounds; 0 keeps the stage-1 labelling");
  segment->add_option("--eps", eps, "Stop when the changed fraction is at most eps");
  segment->add_option("--probabilities", prob_path, "Write the per-voxel max probability volume");

  std::string pred_path, truth_path;
  std::optional<std::size_t> regions;
  auto* evaluate = app.add_subcommand("evaluate", "Compare a labelling against ground truth");
  common.attach(evaluate);
  evaluate->add_option("--pred", pred_path, "Predicted label file")->required();
  evaluate->add_option("--truth", truth_path, "Ground-truth label file")->required();
  evaluate->add_option("--regions", regions, "Number of regions N (default: synth.n_regions)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }
  vseg::set_log_level(common.quiet ? vseg::LogLevel::Warning : vseg::LogLevel::Info);

  try {
    if (gen->parsed()) return cmd_gen_synth(common, out_dir);
    if (train->parsed()) return cmd_train(common, data_dir, model_out, stage, history);
    if (segment->parsed()) {
      return cmd_segment(common, stage1_model, full_model, volume_path, labels_out, report_path, max_iters, eps,
                         prob_path);
    }
    if (evaluate->parsed()) return cmd_evaluate(common, pred_path, truth_path, regions);
  } catch (const UsageError& e) {
    std::cerr << "vseg: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "vseg: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "vseg: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
