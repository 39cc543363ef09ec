#ifndef VSEG_METRICS_HPP
#define VSEG_METRICS_HPP

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "vseg/volume.hpp"

namespace vseg {

struct EvalReport {
  std::vector<std::optional<double>> per_region_dice;  ///< empty where the region is absent from truth
  std::vector<std::size_t> true_count;
  std::vector<std::size_t> pred_count;
  double mean_dice = 0.0;
  double error_rate = 0.0;

  /// `region,dice,true_count,pred_count` rows followed by the summary line.
  std::string to_csv() const;
  std::string summary_line() const;
};

/// 2|A n B| / (|A| + |B|) for one region id. Returns 0 when both sets are empty.
double dice(const LabelVolume& pred, const LabelVolume& truth, std::uint16_t region);

/// Fraction of masked voxels where pred != truth.
double error_rate(const LabelVolume& pred, const LabelVolume& truth, const Mask& mask);

/// Per-region dice over regions 1..N, mean over regions present in truth and
/// error rate over foreground-truth voxels.
EvalReport evaluate(const LabelVolume& pred, const LabelVolume& truth, std::size_t n_regions);

}  // namespace vseg

#endif  // VSEG_METRICS_HPP
