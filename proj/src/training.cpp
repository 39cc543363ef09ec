#include "vseg/training.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "vseg/log.hpp"
#include "vseg/parallel.hpp"

namespace vseg {

std::vector<float> TrainingSet::one_hot(std::size_t i) const {
  std::vector<float> y(n_regions, 0.0f);
  y.at(labels.at(i) - 1u) = 1.0f;
  return y;
}

void TrainingSet::append(TrainingSet other) {
  if (n_regions == 0) n_regions = other.n_regions;
  if (other.n_regions != n_regions) throw std::invalid_argument("cannot append sets with different region counts");
  std::move(other.inputs.begin(), other.inputs.end(), std::back_inserter(inputs));
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
  std::move(other.provenance.begin(), other.provenance.end(), std::back_inserter(provenance));
}

std::vector<std::size_t> sample_foreground(const LabelVolume& labels, std::size_t count, Rng& rng) {
  std::vector<std::size_t> foreground;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0) foreground.push_back(i);
  }
  if (count > foreground.size()) {
    throw std::invalid_argument("requested " + std::to_string(count) + " voxels but only " +
                                std::to_string(foreground.size()) + " are foreground");
  }
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, foreground.size() - 1);
    std::swap(foreground[i], foreground[pick(rng)]);
  }
  foreground.resize(count);
  return foreground;
}

namespace {

TrainingSet features_for(const Atlas& atlas, std::span<const std::size_t> indices, const FeatureConfig& cfg,
                         const CentroidSet* cs, std::size_t threads) {
  TrainingSet set;
  set.n_regions = cfg.n_regions;
  set.inputs.resize(indices.size());
  set.labels.resize(indices.size());
  set.provenance.resize(indices.size());
  const Dims& d = atlas.image.dims();
  parallel_chunks(threads, indices.size(), [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const VoxelCoord c = coord_of(d, indices[i]);
      set.inputs[i] = extract_features(atlas.image, c, cfg, cs);
      set.labels[i] = atlas.labels[indices[i]];
      set.provenance[i] = Provenance{atlas.id, c};
    }
  });
  for (auto l : set.labels) {
    if (l > cfg.n_regions) throw std::invalid_argument("atlas '" + atlas.id + "' has label above n_regions");
  }
  return set;
}

}  // namespace

TrainingSet sample_voxels(const std::vector<Atlas>& atlases, std::size_t per_atlas, const FeatureConfig& cfg,
                          bool with_centroids, Rng& rng, std::size_t threads) {
  return sample_split(atlases, per_atlas, 0, cfg, with_centroids, rng, threads).first;
}

std::pair<TrainingSet, TrainingSet> sample_split(const std::vector<Atlas>& atlases, std::size_t per_atlas_train,
                                                 std::size_t per_atlas_val, const FeatureConfig& cfg,
                                                 bool with_centroids, Rng& rng, std::size_t threads) {
  TrainingSet train_set, val_set;
  train_set.n_regions = val_set.n_regions = cfg.n_regions;
  for (const Atlas& atlas : atlases) {
    const auto picked = sample_foreground(atlas.labels, per_atlas_train + per_atlas_val, rng);
    CentroidSet cs;
    if (with_centroids) cs = compute_centroids(atlas.labels, cfg.n_regions);
    const CentroidSet* csp = with_centroids ? &cs : nullptr;
    const std::span<const std::size_t> all(picked);
    train_set.append(features_for(atlas, all.subspan(0, per_atlas_train), cfg, csp, threads));
    val_set.append(features_for(atlas, all.subspan(per_atlas_train), cfg, csp, threads));
  }
  return {std::move(train_set), std::move(val_set)};
}

double classification_error(const NetworkModel<float>& model, const TrainingSet& set, std::size_t threads) {
  if (set.empty()) throw std::invalid_argument("classification error of an empty set");
  std::vector<std::size_t> wrong(std::max<std::size_t>(1, threads), 0);
  parallel_chunks(threads, set.size(), [&](std::size_t w, std::size_t begin, std::size_t end) {
    ForwardTrace<float> trace;
    for (std::size_t i = begin; i < end; ++i) {
      const auto probs = model.forward(set.inputs[i], trace);
      if (argmax_class<float>(probs) + 1 != set.labels[i]) ++wrong[w];
    }
  });
  const std::size_t total = std::accumulate(wrong.begin(), wrong.end(), std::size_t{0});
  return static_cast<double>(total) / static_cast<double>(set.size());
}

BatchGradient batch_gradient(const NetworkModel<float>& model, std::span<const FeatureVector* const> inputs,
                             std::span<const std::uint16_t> labels, std::size_t threads) {
  const std::size_t n = inputs.size();
  if (n == 0 || labels.size() != n) throw std::invalid_argument("batch gradient needs matching, non-empty inputs");
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, n));
  std::vector<std::vector<float>> worker_grads(workers, std::vector<float>(model.parameter_count(), 0.0f));
  std::vector<double> worker_loss(workers, 0.0);

  parallel_chunks(workers, n, [&](std::size_t w, std::size_t begin, std::size_t end) {
    ForwardTrace<float> trace;
    for (std::size_t i = begin; i < end; ++i) {
      const auto probs = model.forward(*inputs[i], trace);
      const std::size_t cls = labels[i] - 1u;
      worker_loss[w] += nll_loss<float>(probs, cls);
      const auto g = softmax_nll_grad<float>(probs, cls);
      model.backward(trace, g, worker_grads[w]);
    }
  });

  BatchGradient out;
  out.grads = std::move(worker_grads[0]);
  for (std::size_t w = 1; w < workers; ++w) {
    for (std::size_t k = 0; k < out.grads.size(); ++k) out.grads[k] += worker_grads[w][k];
  }
  const float inv = 1.0f / static_cast<float>(n);
  for (auto& g : out.grads) g *= inv;
  for (double l : worker_loss) out.loss += l;
  out.loss /= static_cast<double>(n);
  return out;
}

TrainResult train(NetworkModel<float> model, const TrainingSet& train_set, const TrainingSet& val_set,
                  const TrainOptions& options) {
  if (train_set.empty() || val_set.empty()) throw std::invalid_argument("training and validation sets must be non-empty");
  if (options.batch_size == 0) throw std::invalid_argument("batch size must be positive");
  const auto start = std::chrono::steady_clock::now();
  const bool noisy = model.has_centroid_pathway() && options.sigma > 0.0;

  TrainState<float> state;
  state.learning_rate = options.learning_rate;
  state.momentum = options.momentum;
  state.batch_size = options.batch_size;
  state.patience = options.patience;
  state.seed = options.seed;
  state.velocity.assign(model.parameter_count(), 0.0f);
  Rng rng(options.seed);

  TrainResult result;
  result.initial_val_error = classification_error(model, val_set, options.threads);
  result.best_val_error = result.initial_val_error;
  state.best_val_error = result.initial_val_error;
  std::vector<float> best_params(model.params().begin(), model.params().end());

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<FeatureVector> noisy_inputs;
  std::vector<const FeatureVector*> batch_inputs;
  std::vector<std::uint16_t> batch_labels;

  for (std::size_t epoch = 1; epoch <= options.max_epochs; ++epoch) {
    state.epoch = epoch;
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += options.batch_size) {
      const std::size_t end = std::min(order.size(), begin + options.batch_size);
      batch_inputs.clear();
      batch_labels.clear();
      noisy_inputs.resize(end - begin);
      for (std::size_t i = begin; i < end; ++i) {
        const FeatureVector& fv = train_set.inputs[order[i]];
        if (noisy) {
          // The noise layer: fresh corruption of the distances each time a point is seen.
          FeatureVector& copy = noisy_inputs[i - begin];
          copy = fv;
          copy.cdist = corrupt_distances(fv.cdist, options.sigma, rng);
          batch_inputs.push_back(&copy);
        } else {
          batch_inputs.push_back(&fv);
        }
        batch_labels.push_back(train_set.labels[order[i]]);
      }
      const BatchGradient bg = batch_gradient(model, batch_inputs, batch_labels, options.threads);
      if (!std::isfinite(bg.loss)) {
        throw std::runtime_error("non-finite training loss at epoch " + std::to_string(epoch) + ", batch starting " +
                                 std::to_string(begin));
      }
      loss_sum += bg.loss * static_cast<double>(end - begin);
      sgd_momentum_step<float>(model.params(), bg.grads, state);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train_set.size());
    rec.val_error = classification_error(model, val_set, options.threads);
    rec.elapsed_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.push_back(rec);
    {
      std::ostringstream msg;
      msg << "epoch " << epoch << " train_loss=" << rec.train_loss << " val_error=" << rec.val_error;
      log_info(msg.str());
    }

    if (rec.val_error < state.best_val_error) {
      state.best_val_error = rec.val_error;
      state.epochs_without_improvement = 0;
      result.best_epoch = epoch;
      best_params.assign(model.params().begin(), model.params().end());
    } else if (++state.epochs_without_improvement >= std::max<std::size_t>(1, state.patience)) {
      break;
    }
  }

  result.best_val_error = state.best_val_error;
  result.model = NetworkModel<float>(model.config(), std::move(best_params));
  return result;
}

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::ostringstream out;
  out << "epoch,train_loss,val_error,elapsed_s\n" << std::setprecision(9);
  for (const auto& r : history) {
    out << r.epoch << ',' << r.train_loss << ',' << r.val_error << ',' << r.elapsed_s << '\n';
  }
  return out.str();
}

void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << history_csv(history);
}

}  // namespace vseg
