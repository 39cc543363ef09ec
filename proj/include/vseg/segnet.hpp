#ifndef VSEG_SEGNET_HPP
#define VSEG_SEGNET_HPP

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vseg/features.hpp"
#include "vseg/layers.hpp"
#include "vseg/tensor.hpp"

namespace vseg {

/// Which input families feed the network. `ortho_planes` is 0, 1 (transverse
/// plane only) or 3.
struct PathwaySelection {
  bool patch3d = true;
  std::size_t ortho_planes = 3;
  bool downscaled = true;
  bool centroids = true;

  friend bool operator==(const PathwaySelection&, const PathwaySelection&) = default;
};

struct NetworkConfig {
  FeatureConfig features;
  std::size_t kernel = 5;  ///< t
  std::size_t pool = 2;    ///< p
  std::vector<std::size_t> conv3d_maps{20};      ///< one conv+pool block per entry
  std::vector<std::size_t> ortho_maps{20, 50};
  std::vector<std::size_t> down_maps{20, 50};
  std::size_t centroid_hidden = 0;  ///< 0: distances feed the merge directly
  std::vector<std::size_t> hidden{1000, 1000};
  double sigma = 0.05;  ///< centroid-distance noise during training
  PathwaySelection pathways;

  /// Throws std::invalid_argument when a conv/pool chain collapses or a width is zero.
  void validate() const;
  /// Number of layers along the deepest path, output layer included.
  std::size_t depth() const;

  /// Full-scale configuration with patch sizes a=13, b=29, c=29, s=3, N=134.
  static NetworkConfig paper_like();
  /// Small configuration that trains on a 64^3, 8-region volume set in minutes.
  static NetworkConfig desk();

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

enum class PathwayKind { Patch3d, Ortho, Down, Centroids };

struct ParamBlockInfo {
  std::string name;
  Shape shape;
  std::size_t offset = 0;
  std::size_t size = 0;

  friend bool operator==(const ParamBlockInfo&, const ParamBlockInfo&) = default;
};

struct ConvStage {
  ConvShape shape;
  std::size_t weights = 0;  ///< block index
  std::size_t bias = 0;

  friend bool operator==(const ConvStage&, const ConvStage&) = default;
};

struct DenseStage {
  std::size_t n_in = 0;
  std::size_t n_out = 0;
  std::size_t weights = 0;
  std::size_t bias = 0;
  bool relu = true;

  friend bool operator==(const DenseStage&, const DenseStage&) = default;
};

struct Pathway {
  PathwayKind kind = PathwayKind::Patch3d;
  std::size_t plane = 0;  ///< feature plane for Ortho/Down pathways
  Shape input_shape;
  std::vector<ConvStage> stages;
  std::vector<DenseStage> dense;  ///< optional centroid pre-layer
  std::size_t output_size = 0;

  friend bool operator==(const Pathway&, const Pathway&) = default;
};

/// Wiring and parameter table derived from a config; no parameter values.
struct NetworkLayout {
  std::vector<ParamBlockInfo> blocks;
  std::vector<Pathway> pathways;
  std::vector<DenseStage> head;  ///< merged fully connected stack, output layer last
  std::size_t merge_width = 0;
  std::size_t parameter_count = 0;

  friend bool operator==(const NetworkLayout&, const NetworkLayout&) = default;
};

NetworkLayout make_layout(const NetworkConfig& config);

/// Total parameters with shared blocks counted once.
std::size_t param_count(const NetworkConfig& config);

/// Per-datapoint activations kept for the backward pass.
template <typename T>
struct ForwardTrace {
  struct StageTrace {
    Tensor<T> input;
    Tensor<T> pre;
    PoolResult<T> pool;
  };
  struct PathTrace {
    std::vector<StageTrace> stages;
    std::vector<Tensor<T>> dense_inputs;
    std::vector<Tensor<T>> dense_pre;
    Tensor<T> output;
  };
  std::vector<PathTrace> paths;
  std::vector<Tensor<T>> head_inputs;
  std::vector<Tensor<T>> head_pre;
  std::vector<T> probabilities;
};

/// SegNet: per-feature pathways merged into a fully connected softmax head.
template <typename T>
class NetworkModel {
 public:
  NetworkModel() = default;
  NetworkModel(NetworkConfig config, std::vector<T> params);

  const NetworkConfig& config() const { return config_; }
  const NetworkLayout& layout() const { return layout_; }
  bool has_centroid_pathway() const { return config_.pathways.centroids; }
  std::size_t parameter_count() const { return params_.size(); }
  /// Number of feature values consumed per datapoint.
  std::size_t input_length() const;

  std::span<T> params() { return params_; }
  std::span<const T> params() const { return params_; }
  std::span<T> block(std::size_t i) { return std::span<T>(params_).subspan(layout_.blocks[i].offset, layout_.blocks[i].size); }
  std::span<const T> block(std::size_t i) const {
    return std::span<const T>(params_).subspan(layout_.blocks[i].offset, layout_.blocks[i].size);
  }
  std::size_t block_index(const std::string& name) const;

  /// Class probabilities over regions 1..N (index 0 is region 1).
  std::vector<T> forward(const FeatureVector& fv) const;
  std::vector<T> forward(const FeatureVector& fv, ForwardTrace<T>& trace) const;
  /// Accumulates dL/dtheta into grads (same layout as params()) from dL/dlogits.
  void backward(const ForwardTrace<T>& trace, std::span<const T> grad_logits, std::span<T> grads) const;

  template <typename U>
  NetworkModel<U> cast() const {
    return NetworkModel<U>(config_, std::vector<U>(params_.begin(), params_.end()));
  }

  friend bool operator==(const NetworkModel&, const NetworkModel&) = default;

 private:
  Tensor<T> input_tensor(const Pathway& p, const FeatureVector& fv) const;

  NetworkConfig config_;
  NetworkLayout layout_;
  std::vector<T> params_;
};

/// Feature families a network with this config consumes.
FeatureBlocks required_blocks(const NetworkConfig& config);

/// Builds a model with weights uniform in +-sqrt(6 / (fan_in + fan_out)) and zero biases.
NetworkModel<float> build(NetworkConfig config, bool with_centroid_pathway, Rng& rng);

/// Index of the most probable class, lowest index on ties.
template <typename T>
std::size_t argmax_class(std::span<const T> probs) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < probs.size(); ++i) {
    if (probs[i] > probs[best]) best = i;
  }
  return best;
}

void save_model(const NetworkModel<float>& model, const std::filesystem::path& path);
NetworkModel<float> load_model(const std::filesystem::path& path);

/// Key/value text form of a config as embedded in model files.
std::string config_to_text(const NetworkConfig& config);
NetworkConfig config_from_text(const std::string& text);

extern template class NetworkModel<float>;
extern template class NetworkModel<double>;

}  // namespace vseg

#endif  // VSEG_SEGNET_HPP
