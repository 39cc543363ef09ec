#include "vseg/inference.hpp"

#include <algorithm>
#include <chrono>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "vseg/log.hpp"
#include "vseg/parallel.hpp"

namespace vseg {

LabelVolume segment_once(const NetworkModel<float>& model, const Volume& v, const FeatureConfig& cfg,
                         const CentroidSet* cs, const Mask& mask, const InferenceOptions& options,
                         Volume* max_probability) {
  if (!(cfg == model.config().features)) throw std::invalid_argument("feature config does not match the model");
  if (model.has_centroid_pathway() != (cs != nullptr)) {
    throw std::invalid_argument(model.has_centroid_pathway() ? "model needs centroid distances"
                                                             : "model has no centroid pathway");
  }
  if (!(mask.dims == v.dims())) throw std::invalid_argument("mask dims differ from volume dims");

  std::vector<std::size_t> voxels;
  for (std::size_t i = 0; i < mask.values.size(); ++i) {
    if (mask[i]) voxels.push_back(i);
  }
  LabelVolume labels(v.dims(), 0);
  if (max_probability != nullptr) *max_probability = Volume(v.dims(), 0.0f);
  const FeatureBlocks blocks = required_blocks(model.config());
  const std::size_t block_size = std::max<std::size_t>(1, options.block_size);
  const std::size_t n_blocks = (voxels.size() + block_size - 1) / block_size;

  // Each work block writes a disjoint set of voxels, so results do not depend on threads.
  parallel_chunks(options.threads, n_blocks, [&](std::size_t, std::size_t b_begin, std::size_t b_end) {
    ForwardTrace<float> trace;
    std::vector<FeatureVector> features;
    for (std::size_t b = b_begin; b < b_end; ++b) {
      const std::size_t begin = b * block_size;
      const std::size_t end = std::min(voxels.size(), begin + block_size);
      features.resize(end - begin);
      for (std::size_t i = begin; i < end; ++i) {
        features[i - begin] = extract_features(v, coord_of(v.dims(), voxels[i]), cfg, cs, blocks);
      }
      for (std::size_t i = begin; i < end; ++i) {
        const auto probs = model.forward(features[i - begin], trace);
        const std::size_t cls = argmax_class<float>(probs);
        labels[voxels[i]] = static_cast<std::uint16_t>(cls + 1);
        if (max_probability != nullptr) (*max_probability)[voxels[i]] = probs[cls];
      }
    }
  });
  return labels;
}

double changed_fraction(const LabelVolume& prev, const LabelVolume& next, const Mask& mask) {
  if (!(prev.dims() == next.dims()) || !(mask.dims == prev.dims())) {
    throw std::invalid_argument("changed_fraction: dims mismatch");
  }
  std::size_t total = 0, changed = 0;
  for (std::size_t i = 0; i < prev.size(); ++i) {
    if (!mask[i]) continue;
    ++total;
    changed += prev[i] != next[i];
  }
  return total ? static_cast<double>(changed) / static_cast<double>(total) : 0.0;
}

double changed_fraction(const LabelVolume& prev, const LabelVolume& next) {
  Mask all{prev.dims(), std::vector<std::uint8_t>(prev.size(), 1)};
  return changed_fraction(prev, next, all);
}

SegmentationResult segment_refined(const NetworkModel<float>& stage1, const NetworkModel<float>& full,
                                   const Volume& v, const FeatureConfig& cfg, const Mask& mask,
                                   std::size_t max_iters, double eps, const InferenceOptions& options) {
  if (stage1.has_centroid_pathway()) throw std::invalid_argument("stage-1 model must not use centroid distances");
  if (!full.has_centroid_pathway()) throw std::invalid_argument("refinement model must use centroid distances");
  const auto start = std::chrono::steady_clock::now();

  SegmentationResult result;
  const bool last_is_stage1 = max_iters == 0;
  Volume probs;
  result.initial_labels = segment_once(stage1, v, cfg, nullptr, mask, options,
                                       options.keep_probabilities && last_is_stage1 ? &probs : nullptr);
  if (result.initial_labels.max_label() == 0) {
    throw std::runtime_error("stage-1 segmentation is entirely background; centroids cannot be estimated");
  }
  LabelVolume prev = result.initial_labels;

  for (std::size_t round = 1; round <= max_iters; ++round) {
    result.centroids = compute_centroids(prev, cfg.n_regions);
    LabelVolume next = segment_once(full, v, cfg, &result.centroids, mask, options,
                                    options.keep_probabilities ? &probs : nullptr);
    const double f = changed_fraction(prev, next, mask);
    result.changed_fraction.push_back(f);
    result.iterations = round;
    prev = std::move(next);
    {
      std::ostringstream msg;
      msg << "refinement round " << round << " changed_fraction=" << f;
      log_info(msg.str());
    }
    if (f <= eps) {
      result.converged = true;
      break;
    }
  }
  if (max_iters > 0 && !result.converged) {
    log_warning("refinement did not converge within " + std::to_string(max_iters) + " rounds");
  }
  result.labels = std::move(prev);
  if (options.keep_probabilities) result.probabilities = std::move(probs);
  result.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

std::string run_report_json(const SegmentationResult& result, std::uint64_t seed, const std::string& config_json) {
  nlohmann::ordered_json j;
  j["rounds"] = result.iterations;
  j["changed_fractions"] = result.changed_fraction;
  j["converged"] = result.converged;
  j["wall_time_s"] = result.wall_time_s;
  j["seed"] = seed;
  j["config"] = config_json.empty() ? nlohmann::ordered_json::object() : nlohmann::ordered_json::parse(config_json);
  return j.dump(2) + "\n";
}

}  // namespace vseg
