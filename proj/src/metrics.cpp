#include "vseg/metrics.hpp"

#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace vseg {

namespace {

void require_same_dims(const LabelVolume& a, const LabelVolume& b) {
  if (!(a.dims() == b.dims())) throw std::invalid_argument("label volumes have different dims");
}

}  // namespace

double dice(const LabelVolume& pred, const LabelVolume& truth, std::uint16_t region) {
  require_same_dims(pred, truth);
  std::size_t a = 0, b = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool in_a = pred[i] == region;
    const bool in_b = truth[i] == region;
    a += in_a;
    b += in_b;
    both += in_a && in_b;
  }
  if (a + b == 0) return 0.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

double error_rate(const LabelVolume& pred, const LabelVolume& truth, const Mask& mask) {
  require_same_dims(pred, truth);
  if (!(mask.dims == pred.dims())) throw std::invalid_argument("mask dims differ from label dims");
  std::size_t total = 0, wrong = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) continue;
    ++total;
    wrong += pred[i] != truth[i];
  }
  if (total == 0) return 0.0;
  return static_cast<double>(wrong) / static_cast<double>(total);
}

EvalReport evaluate(const LabelVolume& pred, const LabelVolume& truth, std::size_t n_regions) {
  require_same_dims(pred, truth);
  EvalReport r;
  r.true_count.assign(n_regions, 0);
  r.pred_count.assign(n_regions, 0);
  std::vector<std::size_t> overlap(n_regions, 0);
  std::size_t foreground = 0, wrong = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const std::uint16_t p = pred[i];
    const std::uint16_t t = truth[i];
    if (p >= 1 && p <= n_regions) ++r.pred_count[p - 1];
    if (t >= 1 && t <= n_regions) ++r.true_count[t - 1];
    if (p == t && t >= 1 && t <= n_regions) ++overlap[t - 1];
    if (t != 0) {
      ++foreground;
      wrong += p != t;
    }
  }
  r.per_region_dice.resize(n_regions);
  double sum = 0.0;
  std::size_t defined = 0;
  for (std::size_t l = 0; l < n_regions; ++l) {
    if (r.true_count[l] == 0) continue;
    const double d = 2.0 * static_cast<double>(overlap[l]) / static_cast<double>(r.true_count[l] + r.pred_count[l]);
    r.per_region_dice[l] = d;
    sum += d;
    ++defined;
  }
  r.mean_dice = defined ? sum / static_cast<double>(defined) : 0.0;
  r.error_rate = foreground ? static_cast<double>(wrong) / static_cast<double>(foreground) : 0.0;
  return r;
}

std::string EvalReport::summary_line() const {
  std::ostringstream out;
  out << std::setprecision(9) << "mean_dice=" << mean_dice << " error_rate=" << error_rate;
  return out.str();
}

std::string EvalReport::to_csv() const {
  std::ostringstream out;
  out << "region,dice,true_count,pred_count\n" << std::setprecision(9);
  for (std::size_t l = 0; l < per_region_dice.size(); ++l) {
    out << (l + 1) << ',';
    if (per_region_dice[l]) {
      out << *per_region_dice[l];
    } else {
      out << "nan";
    }
    out << ',' << true_count[l] << ',' << pred_count[l] << '\n';
  }
  out << summary_line() << '\n';
  return out.str();
}

}  // namespace vseg
