#ifndef VSEG_TRAINING_HPP
#define VSEG_TRAINING_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "vseg/features.hpp"
#include "vseg/segnet.hpp"
#include "vseg/volume.hpp"

namespace vseg {

struct Provenance {
  std::string atlas_id;
  VoxelCoord voxel;
};

/// Feature vectors with their region ids; targets are one-hot over N regions.
struct TrainingSet {
  std::size_t n_regions = 0;
  std::vector<FeatureVector> inputs;
  std::vector<std::uint16_t> labels;  ///< region id in 1..N
  std::vector<Provenance> provenance;

  std::size_t size() const { return inputs.size(); }
  bool empty() const { return inputs.empty(); }
  std::vector<float> one_hot(std::size_t i) const;
  void append(TrainingSet other);
};

/// Draws `count` distinct foreground voxel indices of an atlas uniformly.
std::vector<std::size_t> sample_foreground(const LabelVolume& labels, std::size_t count, Rng& rng);

/// Uniform sampling without replacement over non-background voxels of each
/// atlas. Centroid distances, when requested, come from the atlas's true labels.
TrainingSet sample_voxels(const std::vector<Atlas>& atlases, std::size_t per_atlas, const FeatureConfig& cfg,
                          bool with_centroids, Rng& rng, std::size_t threads = 1);

/// Disjoint train/validation sets drawn from the same atlases.
std::pair<TrainingSet, TrainingSet> sample_split(const std::vector<Atlas>& atlases, std::size_t per_atlas_train,
                                                 std::size_t per_atlas_val, const FeatureConfig& cfg,
                                                 bool with_centroids, Rng& rng, std::size_t threads = 1);

inline constexpr double kProbabilityFloor = 1e-12;

/// -log(p[true_class]) with the probability floored at 1e-12.
template <typename T>
double nll_loss(std::span<const T> probs, std::size_t true_class) {
  const double p = static_cast<double>(probs[true_class]);
  return -std::log(std::max(p, kProbabilityFloor));
}

/// Mean loss over a batch of (probabilities, class) pairs.
template <typename T>
double nll_loss_mean(const std::vector<std::vector<T>>& probs, std::span<const std::size_t> classes) {
  if (probs.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) total += nll_loss<T>(probs[i], classes[i]);
  return total / static_cast<double>(probs.size());
}

/// Gradient of nll(softmax(z)) with respect to z: probs - onehot(true_class).
template <typename T>
std::vector<T> softmax_nll_grad(std::span<const T> probs, std::size_t true_class) {
  std::vector<T> g(probs.begin(), probs.end());
  g[true_class] -= T{1};
  return g;
}

template <typename T>
struct TrainState {
  double learning_rate = 0.05;  ///< alpha
  double momentum = 0.5;        ///< m
  std::vector<T> velocity;      ///< previous update per parameter
  std::size_t batch_size = 200;
  std::size_t epoch = 0;
  double best_val_error = std::numeric_limits<double>::infinity();
  std::size_t patience = 10;
  std::size_t epochs_without_improvement = 0;
  std::uint64_t seed = 0;
};

/// velocity = -alpha * grad + m * velocity; params += velocity.
/// Throws std::runtime_error on a non-finite gradient entry.
template <typename T>
void sgd_momentum_step(std::span<T> params, std::span<const T> grads, TrainState<T>& state) {
  if (grads.size() != params.size()) throw std::invalid_argument("gradient length does not match parameters");
  if (state.velocity.size() != params.size()) state.velocity.assign(params.size(), T{0});
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(static_cast<double>(grads[i]))) {
      throw std::runtime_error("non-finite gradient at parameter " + std::to_string(i) + " (epoch " +
                               std::to_string(state.epoch) + ")");
    }
  }
  const T alpha = static_cast<T>(state.learning_rate);
  const T m = static_cast<T>(state.momentum);
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.velocity[i] = -alpha * grads[i] + m * state.velocity[i];
    params[i] += state.velocity[i];
  }
}

struct TrainOptions {
  std::size_t batch_size = 200;
  double learning_rate = 0.05;
  double momentum = 0.5;
  std::size_t patience = 10;
  std::size_t max_epochs = 100;
  double sigma = 0.05;  ///< centroid-distance noise; only used if the model has that pathway
  std::size_t threads = 1;
  std::uint64_t seed = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_error = 0.0;
  double elapsed_s = 0.0;
};

struct TrainResult {
  NetworkModel<float> model;  ///< snapshot with the lowest validation error
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;  ///< 0 when no epoch improved on the initial model
  double best_val_error = 1.0;
  double initial_val_error = 1.0;
};

/// Fraction of datapoints whose argmax class differs from the label (no noise).
double classification_error(const NetworkModel<float>& model, const TrainingSet& set, std::size_t threads = 1);

struct BatchGradient {
  std::vector<float> grads;  ///< batch-mean gradient
  double loss = 0.0;         ///< batch-mean loss
};

/// Mean gradient and loss over the listed datapoints, reduced in worker order.
BatchGradient batch_gradient(const NetworkModel<float>& model, std::span<const FeatureVector* const> inputs,
                             std::span<const std::uint16_t> labels, std::size_t threads = 1);

/// Minibatch SGD with momentum, per-epoch shuffling, noise on centroid
/// distances and early stopping on validation error rate.
TrainResult train(NetworkModel<float> model, const TrainingSet& train_set, const TrainingSet& val_set,
                  const TrainOptions& options);

std::string history_csv(const std::vector<EpochRecord>& history);
void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path);

}  // namespace vseg

#endif  // VSEG_TRAINING_HPP
