#include "vseg/segnet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>

namespace vseg {

namespace {

constexpr const char* kPlaneNames[3] = {"sagittal", "coronal", "transverse"};
constexpr int kModelFormatVersion = 1;

std::size_t pooled(std::size_t side, std::size_t p) { return side / p; }

class LayoutBuilder {
 public:
  std::size_t add(std::string name, Shape shape) {
    ParamBlockInfo info;
    info.name = std::move(name);
    info.size = shape_size(shape);
    info.shape = std::move(shape);
    info.offset = offset_;
    offset_ += info.size;
    blocks_.push_back(std::move(info));
    return blocks_.size() - 1;
  }

  DenseStage dense(const std::string& prefix, std::size_t n_in, std::size_t n_out, bool relu) {
    DenseStage d;
    d.n_in = n_in;
    d.n_out = n_out;
    d.relu = relu;
    d.weights = add(prefix + ".w", Shape{n_out, n_in});
    d.bias = add(prefix + ".b", Shape{n_out});
    return d;
  }

  std::vector<ParamBlockInfo> take() { return std::move(blocks_); }
  std::size_t total() const { return offset_; }

 private:
  std::vector<ParamBlockInfo> blocks_;
  std::size_t offset_ = 0;
};

// Conv+pool chain for one pathway. `shared_first` reuses the first stage's
// blocks when the pathway belongs to a weight-sharing group.
Pathway conv_pathway(LayoutBuilder& lb, PathwayKind kind, std::size_t plane, std::size_t side, bool volumetric,
                     const std::vector<std::size_t>& maps, std::size_t t, std::size_t p, const std::string& group,
                     const std::string& own, const ConvStage* shared_first) {
  Pathway path;
  path.kind = kind;
  path.plane = plane;
  Spatial sp = volumetric ? Spatial{side, side, side} : Spatial{1, side, side};
  path.input_shape = map_shape(1, sp, volumetric);
  std::size_t in_maps = 1;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (maps[i] == 0) throw std::invalid_argument(own + ": zero feature maps in block " + std::to_string(i));
    const ConvShape cs = volumetric ? ConvShape::cubic(in_maps, maps[i], t) : ConvShape::planar(in_maps, maps[i], t);
    if (sp.h < t || (volumetric && sp.d < t)) {
      throw std::invalid_argument(own + ": block " + std::to_string(i) + " input side " + std::to_string(sp.h) +
                                  " is smaller than kernel " + std::to_string(t));
    }
    Spatial conv_out = cs.output(sp);
    Spatial pool_out{volumetric ? pooled(conv_out.d, p) : 1, pooled(conv_out.h, p), pooled(conv_out.w, p)};
    if (pool_out.size() == 0) {
      throw std::invalid_argument(own + ": block " + std::to_string(i) + " pooling collapses side " +
                                  std::to_string(conv_out.h));
    }
    ConvStage stage;
    stage.shape = cs;
    if (i == 0 && shared_first != nullptr) {
      stage.weights = shared_first->weights;
      stage.bias = shared_first->bias;
    } else {
      const std::string prefix = (i == 0 ? group : own) + ".conv" + std::to_string(i);
      stage.weights = lb.add(prefix + ".w", cs.weight_shape());
      stage.bias = lb.add(prefix + ".b", Shape{cs.out_maps});
    }
    path.stages.push_back(stage);
    sp = pool_out;
    in_maps = maps[i];
  }
  path.output_size = in_maps * sp.size();
  return path;
}

std::string join(const std::vector<std::size_t>& v) {
  if (v.empty()) return "-";
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

std::vector<std::size_t> parse_list(const std::string& text) {
  std::vector<std::size_t> out;
  if (text == "-") return out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(item, &pos);
    if (pos != item.size()) throw FormatError("bad list entry '" + item + "'");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

}  // namespace

void NetworkConfig::validate() const {
  features.validate();
  if (kernel == 0 || pool == 0) throw std::invalid_argument("kernel and pool sides must be positive");
  if (pathways.ortho_planes != 0 && pathways.ortho_planes != 1 && pathways.ortho_planes != 3) {
    throw std::invalid_argument("ortho_planes must be 0, 1 or 3");
  }
  for (auto w : hidden) {
    if (w == 0) throw std::invalid_argument("hidden widths must be positive");
  }
  const NetworkLayout layout = make_layout(*this);
  if (layout.merge_width == 0) throw std::invalid_argument("network has no input pathway");
}

std::size_t NetworkConfig::depth() const {
  std::size_t lower = 0;
  if (pathways.patch3d) lower = std::max(lower, conv3d_maps.size());
  if (pathways.ortho_planes > 0) lower = std::max(lower, ortho_maps.size());
  if (pathways.downscaled) lower = std::max(lower, down_maps.size());
  if (pathways.centroids && centroid_hidden > 0) lower = std::max<std::size_t>(lower, 1);
  return lower + hidden.size() + 1;
}

NetworkConfig NetworkConfig::paper_like() {
  NetworkConfig cfg;
  cfg.features = FeatureConfig{13, 29, 29, 3, 134};
  cfg.kernel = 5;
  cfg.pool = 2;
  cfg.conv3d_maps = {20};
  cfg.ortho_maps = {20, 50};
  cfg.down_maps = {20, 50};
  cfg.hidden = {1000, 1000};
  return cfg;
}

NetworkConfig NetworkConfig::desk() {
  NetworkConfig cfg;
  cfg.features = FeatureConfig{9, 13, 13, 3, 8};
  cfg.kernel = 5;
  cfg.pool = 2;
  cfg.conv3d_maps = {8};
  cfg.ortho_maps = {8};
  cfg.down_maps = {8};
  cfg.hidden = {64};
  return cfg;
}

NetworkLayout make_layout(const NetworkConfig& cfg) {
  LayoutBuilder lb;
  NetworkLayout layout;
  const FeatureConfig& f = cfg.features;
  const PathwaySelection& sel = cfg.pathways;

  if (sel.patch3d) {
    layout.pathways.push_back(conv_pathway(lb, PathwayKind::Patch3d, 0, f.a, true, cfg.conv3d_maps, cfg.kernel,
                                           cfg.pool, "patch3d", "patch3d", nullptr));
  }
  auto add_family = [&](PathwayKind kind, std::size_t side, const std::vector<std::size_t>& maps,
                        const std::string& name, const std::vector<std::size_t>& planes) {
    std::optional<ConvStage> shared;
    for (std::size_t plane : planes) {
      Pathway path = conv_pathway(lb, kind, plane, side, false, maps, cfg.kernel, cfg.pool, name,
                                  name + "." + kPlaneNames[plane], shared ? &*shared : nullptr);
      if (!shared && !path.stages.empty()) shared = path.stages.front();
      layout.pathways.push_back(std::move(path));
    }
  };
  std::vector<std::size_t> planes;
  if (sel.ortho_planes == 3) planes = {0, 1, 2};
  if (sel.ortho_planes == 1) planes = {static_cast<std::size_t>(Plane::Transverse)};
  add_family(PathwayKind::Ortho, f.b, cfg.ortho_maps, "ortho", planes);
  if (sel.downscaled) add_family(PathwayKind::Down, f.c, cfg.down_maps, "down", {0, 1, 2});

  if (sel.centroids) {
    Pathway path;
    path.kind = PathwayKind::Centroids;
    path.input_shape = Shape{f.n_regions};
    path.output_size = f.n_regions;
    if (cfg.centroid_hidden > 0) {
      path.dense.push_back(lb.dense("cdist.fc0", f.n_regions, cfg.centroid_hidden, true));
      path.output_size = cfg.centroid_hidden;
    }
    layout.pathways.push_back(std::move(path));
  }

  for (const auto& p : layout.pathways) layout.merge_width += p.output_size;
  std::size_t width = layout.merge_width;
  for (std::size_t i = 0; i < cfg.hidden.size(); ++i) {
    layout.head.push_back(lb.dense("fc" + std::to_string(i), width, cfg.hidden[i], true));
    width = cfg.hidden[i];
  }
  layout.head.push_back(lb.dense("out", width, f.n_regions, false));

  layout.parameter_count = lb.total();
  layout.blocks = lb.take();
  return layout;
}

FeatureBlocks required_blocks(const NetworkConfig& config) {
  FeatureBlocks b;
  b.patch3d = config.pathways.patch3d;
  b.ortho2d = config.pathways.ortho_planes > 0;
  b.ortho2d_down = config.pathways.downscaled;
  b.cdist = config.pathways.centroids;
  return b;
}

std::size_t param_count(const NetworkConfig& config) { return make_layout(config).parameter_count; }

template <typename T>
NetworkModel<T>::NetworkModel(NetworkConfig config, std::vector<T> params)
    : config_(std::move(config)), layout_(make_layout(config_)), params_(std::move(params)) {
  if (params_.size() != layout_.parameter_count) {
    throw ShapeError("parameter vector has " + std::to_string(params_.size()) + " entries, layout needs " +
                     std::to_string(layout_.parameter_count));
  }
}

template <typename T>
std::size_t NetworkModel<T>::input_length() const {
  std::size_t n = 0;
  for (const auto& p : layout_.pathways) n += shape_size(p.input_shape);
  return n;
}

template <typename T>
std::size_t NetworkModel<T>::block_index(const std::string& name) const {
  for (std::size_t i = 0; i < layout_.blocks.size(); ++i) {
    if (layout_.blocks[i].name == name) return i;
  }
  throw std::out_of_range("no parameter block named '" + name + "'");
}

template <typename T>
Tensor<T> NetworkModel<T>::input_tensor(const Pathway& p, const FeatureVector& fv) const {
  const std::vector<float>* src = nullptr;
  const char* what = "";
  switch (p.kind) {
    case PathwayKind::Patch3d:
      src = &fv.patch3d;
      what = "3D patch";
      break;
    case PathwayKind::Ortho:
      src = &fv.ortho2d[p.plane];
      what = "orthogonal patch";
      break;
    case PathwayKind::Down:
      src = &fv.ortho2d_down[p.plane];
      what = "downscaled patch";
      break;
    case PathwayKind::Centroids:
      src = &fv.cdist;
      what = "centroid distances";
      break;
  }
  const std::size_t expected = shape_size(p.input_shape);
  if (src->size() != expected) {
    throw ShapeError(std::string(what) + " block has " + std::to_string(src->size()) + " values, network expects " +
                     std::to_string(expected));
  }
  return Tensor<T>(p.input_shape, std::vector<T>(src->begin(), src->end()));
}

template <typename T>
std::vector<T> NetworkModel<T>::forward(const FeatureVector& fv) const {
  ForwardTrace<T> trace;
  return forward(fv, trace);
}

template <typename T>
std::vector<T> NetworkModel<T>::forward(const FeatureVector& fv, ForwardTrace<T>& trace) const {
  const std::size_t pool = config_.pool;
  trace.paths.resize(layout_.pathways.size());
  std::vector<const Tensor<T>*> parts;
  parts.reserve(layout_.pathways.size());

  for (std::size_t pi = 0; pi < layout_.pathways.size(); ++pi) {
    const Pathway& path = layout_.pathways[pi];
    auto& pt = trace.paths[pi];
    pt.stages.resize(path.stages.size());
    pt.dense_inputs.resize(path.dense.size());
    pt.dense_pre.resize(path.dense.size());
    Tensor<T> x = input_tensor(path, fv);
    for (std::size_t si = 0; si < path.stages.size(); ++si) {
      const ConvStage& st = path.stages[si];
      auto& tr = pt.stages[si];
      tr.pre = conv_forward(x, ConvParams<T>{st.shape, block(st.weights), block(st.bias)});
      tr.input = std::move(x);
      tr.pool = maxpool_forward(relu_forward(tr.pre), pool, PoolEdge::Truncate);
      x = tr.pool.output;
    }
    for (std::size_t di = 0; di < path.dense.size(); ++di) {
      const DenseStage& d = path.dense[di];
      pt.dense_pre[di] = full_forward(x, FullParams<T>{d.n_in, d.n_out, block(d.weights), block(d.bias)});
      pt.dense_inputs[di] = std::move(x);
      x = relu_forward(pt.dense_pre[di]);
    }
    pt.output = x.reshaped(Shape{x.size()});
    parts.push_back(&pt.output);
  }

  Tensor<T> h = concat(parts);
  trace.head_inputs.resize(layout_.head.size());
  trace.head_pre.resize(layout_.head.size());
  for (std::size_t li = 0; li < layout_.head.size(); ++li) {
    const DenseStage& d = layout_.head[li];
    trace.head_pre[li] = full_forward(h, FullParams<T>{d.n_in, d.n_out, block(d.weights), block(d.bias)});
    trace.head_inputs[li] = std::move(h);
    h = d.relu ? relu_forward(trace.head_pre[li]) : trace.head_pre[li];
  }
  trace.probabilities = softmax<T>(h.data());
  return trace.probabilities;
}

template <typename T>
void NetworkModel<T>::backward(const ForwardTrace<T>& trace, std::span<const T> grad_logits,
                               std::span<T> grads) const {
  if (grads.size() != params_.size()) throw ShapeError("gradient buffer does not match parameter count");
  if (grad_logits.size() != config_.features.n_regions) throw ShapeError("grad_logits length mismatch");
  auto grad_block = [&](std::size_t i) { return grads.subspan(layout_.blocks[i].offset, layout_.blocks[i].size); };

  bool pathways_trainable = false;
  for (const auto& p : layout_.pathways) pathways_trainable |= !p.stages.empty() || !p.dense.empty();

  Tensor<T> g(Shape{grad_logits.size()}, std::vector<T>(grad_logits.begin(), grad_logits.end()));
  for (std::size_t li = layout_.head.size(); li-- > 0;) {
    const DenseStage& d = layout_.head[li];
    if (d.relu) g = relu_backward(trace.head_pre[li], g);
    g = full_backward_accumulate(trace.head_inputs[li], FullParams<T>{d.n_in, d.n_out, block(d.weights), block(d.bias)},
                                 g, FullGrads<T>{grad_block(d.weights), grad_block(d.bias)},
                                 li > 0 || pathways_trainable);
  }
  if (!pathways_trainable) return;

  std::vector<Shape> part_shapes;
  for (const auto& pt : trace.paths) part_shapes.push_back(pt.output.shape());
  auto parts = split(g, part_shapes);

  for (std::size_t pi = 0; pi < layout_.pathways.size(); ++pi) {
    const Pathway& path = layout_.pathways[pi];
    const auto& pt = trace.paths[pi];
    Tensor<T> gp = std::move(parts[pi]);
    for (std::size_t di = path.dense.size(); di-- > 0;) {
      const DenseStage& d = path.dense[di];
      gp = relu_backward(pt.dense_pre[di], gp);
      gp = full_backward_accumulate(pt.dense_inputs[di], FullParams<T>{d.n_in, d.n_out, block(d.weights), block(d.bias)},
                                    gp, FullGrads<T>{grad_block(d.weights), grad_block(d.bias)}, di > 0 || !path.stages.empty());
    }
    for (std::size_t si = path.stages.size(); si-- > 0;) {
      const ConvStage& st = path.stages[si];
      const auto& tr = pt.stages[si];
      gp = maxpool_backward(tr.pool.argmax, tr.pool.input_shape, gp.reshaped(tr.pool.output.shape()));
      gp = relu_backward(tr.pre, gp);
      gp = conv_backward_accumulate(tr.input, ConvParams<T>{st.shape, block(st.weights), block(st.bias)}, gp,
                                    ConvGrads<T>{grad_block(st.weights), grad_block(st.bias)}, si > 0);
    }
  }
}

template class NetworkModel<float>;
template class NetworkModel<double>;

NetworkModel<float> build(NetworkConfig config, bool with_centroid_pathway, Rng& rng) {
  config.pathways.centroids = with_centroid_pathway;
  config.validate();
  const NetworkLayout layout = make_layout(config);
  std::vector<float> params(layout.parameter_count, 0.0f);

  std::set<std::size_t> initialized;
  auto init = [&](std::size_t block, std::size_t fan_in, std::size_t fan_out) {
    if (!initialized.insert(block).second) return;
    const double r = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<float> dist(static_cast<float>(-r), static_cast<float>(r));
    const auto& info = layout.blocks[block];
    for (std::size_t i = 0; i < info.size; ++i) params[info.offset + i] = dist(rng);
  };
  for (const auto& path : layout.pathways) {
    for (const auto& st : path.stages) {
      init(st.weights, st.shape.in_maps * st.shape.kernel.size(), st.shape.out_maps * st.shape.kernel.size());
    }
    for (const auto& d : path.dense) init(d.weights, d.n_in, d.n_out);
  }
  for (const auto& d : layout.head) init(d.weights, d.n_in, d.n_out);
  return NetworkModel<float>(std::move(config), std::move(params));
}

std::string config_to_text(const NetworkConfig& c) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "features.a " << c.features.a << '\n'
      << "features.b " << c.features.b << '\n'
      << "features.c " << c.features.c << '\n'
      << "features.s " << c.features.s << '\n'
      << "features.n_regions " << c.features.n_regions << '\n'
      << "kernel " << c.kernel << '\n'
      << "pool " << c.pool << '\n'
      << "conv3d_maps " << join(c.conv3d_maps) << '\n'
      << "ortho_maps " << join(c.ortho_maps) << '\n'
      << "down_maps " << join(c.down_maps) << '\n'
      << "centroid_hidden " << c.centroid_hidden << '\n'
      << "hidden " << join(c.hidden) << '\n'
      << "sigma " << c.sigma << '\n'
      << "use_patch3d " << (c.pathways.patch3d ? 1 : 0) << '\n'
      << "ortho_planes " << c.pathways.ortho_planes << '\n'
      << "use_downscaled " << (c.pathways.downscaled ? 1 : 0) << '\n'
      << "use_centroids " << (c.pathways.centroids ? 1 : 0) << '\n';
  return out.str();
}

NetworkConfig config_from_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto sp = line.find(' ');
    if (sp == std::string::npos) throw FormatError("malformed config line '" + line + "'");
    if (!kv.emplace(line.substr(0, sp), line.substr(sp + 1)).second) {
      throw FormatError("duplicate config key '" + line.substr(0, sp) + "'");
    }
  }
  auto take = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError("missing config key '" + key + "'");
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  auto take_size = [&](const std::string& key) {
    const std::string v = take(key);
    std::size_t pos = 0;
    const unsigned long long n = std::stoull(v, &pos);
    if (pos != v.size()) throw FormatError("bad integer for '" + key + "'");
    return static_cast<std::size_t>(n);
  };

  NetworkConfig c;
  try {
    c.features.a = take_size("features.a");
    c.features.b = take_size("features.b");
    c.features.c = take_size("features.c");
    c.features.s = take_size("features.s");
    c.features.n_regions = take_size("features.n_regions");
    c.kernel = take_size("kernel");
    c.pool = take_size("pool");
    c.conv3d_maps = parse_list(take("conv3d_maps"));
    c.ortho_maps = parse_list(take("ortho_maps"));
    c.down_maps = parse_list(take("down_maps"));
    c.centroid_hidden = take_size("centroid_hidden");
    c.hidden = parse_list(take("hidden"));
    c.sigma = std::stod(take("sigma"));
    c.pathways.patch3d = take_size("use_patch3d") != 0;
    c.pathways.ortho_planes = take_size("ortho_planes");
    c.pathways.downscaled = take_size("use_downscaled") != 0;
    c.pathways.centroids = take_size("use_centroids") != 0;
  } catch (const std::logic_error& e) {
    throw FormatError(std::string("malformed network config: ") + e.what());
  }
  if (!kv.empty()) throw FormatError("unknown config key '" + kv.begin()->first + "'");
  return c;
}

void save_model(const NetworkModel<float>& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "VSEGMODEL " << kModelFormatVersion << '\n' << config_to_text(model.config());
  const auto& blocks = model.layout().blocks;
  out << "blocks " << blocks.size() << '\n';
  for (const auto& b : blocks) {
    out << b.name << ' ';
    for (std::size_t i = 0; i < b.shape.size(); ++i) out << (i ? "x" : "") << b.shape[i];
    out << '\n';
  }
  out << "end\n";
  const auto params = model.params();
  std::vector<unsigned char> bytes(4 * params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto word = std::bit_cast<std::uint32_t>(params[i]);
    for (std::size_t k = 0; k < 4; ++k) bytes[4 * i + k] = static_cast<unsigned char>((word >> (8 * k)) & 0xFFu);
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

NetworkModel<float> load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "VSEGMODEL " + std::to_string(kModelFormatVersion)) {
    throw FormatError(path.string() + ": unsupported model header '" + line + "'");
  }
  std::string config_text;
  while (std::getline(in, line) && line.rfind("blocks ", 0) != 0) config_text += line + "\n";
  if (!in) throw FormatError(path.string() + ": truncated manifest");
  const NetworkConfig config = config_from_text(config_text);
  const NetworkLayout layout = make_layout(config);
  std::size_t n_blocks = 0;
  try {
    n_blocks = std::stoul(line.substr(7));
  } catch (const std::logic_error&) {
    throw FormatError(path.string() + ": malformed block count");
  }
  if (n_blocks != layout.blocks.size()) throw FormatError(path.string() + ": block table does not match config");
  for (std::size_t i = 0; i < n_blocks; ++i) {
    if (!std::getline(in, line)) throw FormatError(path.string() + ": truncated block table");
    std::ostringstream expect;
    expect << layout.blocks[i].name << ' ';
    for (std::size_t k = 0; k < layout.blocks[i].shape.size(); ++k) expect << (k ? "x" : "") << layout.blocks[i].shape[k];
    if (line != expect.str()) throw FormatError(path.string() + ": block '" + line + "' does not match config");
  }
  if (!std::getline(in, line) || line != "end") throw FormatError(path.string() + ": missing manifest end");

  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() != 4 * layout.parameter_count) {
    throw FormatError(path.string() + ": parameter payload has " + std::to_string(bytes.size()) +
                      " bytes, expected " + std::to_string(4 * layout.parameter_count));
  }
  std::vector<float> params(layout.parameter_count);
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::uint32_t word = 0;
    for (std::size_t k = 0; k < 4; ++k) word |= static_cast<std::uint32_t>(bytes[4 * i + k]) << (8 * k);
    params[i] = std::bit_cast<float>(word);
    if (!std::isfinite(params[i])) throw FormatError(path.string() + ": non-finite parameter");
  }
  return NetworkModel<float>(config, std::move(params));
}

}  // namespace vseg
