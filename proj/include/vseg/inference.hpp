#ifndef VSEG_INFERENCE_HPP
#define VSEG_INFERENCE_HPP

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "vseg/features.hpp"
#include "vseg/segnet.hpp"
#include "vseg/volume.hpp"

namespace vseg {

struct InferenceOptions {
  std::size_t block_size = 4096;  ///< voxels extracted and classified per work block
  std::size_t threads = 1;
  bool keep_probabilities = false;
};

struct SegmentationResult {
  LabelVolume labels;
  LabelVolume initial_labels;         ///< stage-1 output
  std::optional<Volume> probabilities;  ///< per-voxel max probability of the final round
  std::size_t iterations = 0;           ///< refinement rounds run
  std::vector<double> changed_fraction;  ///< one entry per round, in round order
  bool converged = false;
  CentroidSet centroids;  ///< estimate used by the final round
  double wall_time_s = 0.0;
};

/// Labels every masked voxel with the argmax class (lowest id on ties);
/// unmasked voxels get 0. `cs` must be non-null iff the model has the
/// centroid pathway.
LabelVolume segment_once(const NetworkModel<float>& model, const Volume& v, const FeatureConfig& cfg,
                         const CentroidSet* cs, const Mask& mask, const InferenceOptions& options = {},
                         Volume* max_probability = nullptr);

/// Stage-1 segmentation followed by rounds of centroid estimation and full
/// network segmentation until the changed fraction is <= eps or max_iters
/// rounds have run.
SegmentationResult segment_refined(const NetworkModel<float>& stage1, const NetworkModel<float>& full,
                                   const Volume& v, const FeatureConfig& cfg, const Mask& mask,
                                   std::size_t max_iters = 10, double eps = 0.0,
                                   const InferenceOptions& options = {});

/// Disagreeing masked voxels over masked voxels.
double changed_fraction(const LabelVolume& prev, const LabelVolume& next, const Mask& mask);
double changed_fraction(const LabelVolume& prev, const LabelVolume& next);

/// JSON run report: rounds, changed fractions, convergence and wall time.
std::string run_report_json(const SegmentationResult& result, std::uint64_t seed, const std::string& config_json);

}  // namespace vseg

#endif  // VSEG_INFERENCE_HPP
