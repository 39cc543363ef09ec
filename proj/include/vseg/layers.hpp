#ifndef VSEG_LAYERS_HPP
#define VSEG_LAYERS_HPP

// Differentiable layer kernels: valid convolution (2D and 3D), non-overlapping
// max-pooling, affine layers, ReLU, softmax and concatenation. Templates are
// instantiated for float in production and double for gradient checking.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vseg/tensor.hpp"

namespace vseg {

/// Spatial extent of a feature map; 2D maps have d == 1.
struct Spatial {
  std::size_t d = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  std::size_t size() const { return d * h * w; }
  friend bool operator==(const Spatial&, const Spatial&) = default;
};

/// Splits a (maps, h, w) or (maps, d, h, w) shape into its map count and extent.
inline std::pair<std::size_t, Spatial> split_map_shape(const Shape& shape) {
  if (shape.size() == 3) return {shape[0], Spatial{1, shape[1], shape[2]}};
  if (shape.size() == 4) return {shape[0], Spatial{shape[1], shape[2], shape[3]}};
  throw ShapeError("expected a (maps, h, w) or (maps, d, h, w) tensor, got " + shape_string(shape));
}

inline Shape map_shape(std::size_t maps, const Spatial& s, bool volumetric) {
  return volumetric ? Shape{maps, s.d, s.h, s.w} : Shape{maps, s.h, s.w};
}

namespace detail {

// C[M x N] += A[M x K] * B[K x N]
template <typename T>
void gemm_nn_acc(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t q = 0; q < k; ++q) {
      const T av = a[i * k + q];
      const T* brow = b + q * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[M x N] += A[M x K] * B[N x K]^T
template <typename T>
void gemm_nt_acc(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc{0};
      for (std::size_t q = 0; q < k; ++q) acc += arow[q] * brow[q];
      c[i * n + j] += acc;
    }
  }
}

// C[M x N] += A[K x M]^T * B[K x N]
template <typename T>
void gemm_tn_acc(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t q = 0; q < k; ++q) {
    const T* arow = a + q * m;
    const T* brow = b + q * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
std::vector<T>& scratch(std::size_t n) {
  thread_local std::vector<T> buffer;
  buffer.resize(n);
  return buffer;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution

struct ConvShape {
  std::size_t in_maps = 1;
  std::size_t out_maps = 1;
  Spatial kernel;
  bool volumetric = false;

  static ConvShape planar(std::size_t in_maps, std::size_t out_maps, std::size_t t) {
    return {in_maps, out_maps, Spatial{1, t, t}, false};
  }
  static ConvShape cubic(std::size_t in_maps, std::size_t out_maps, std::size_t t) {
    return {in_maps, out_maps, Spatial{t, t, t}, true};
  }

  std::size_t patch_size() const { return in_maps * kernel.size(); }
  std::size_t weight_count() const { return out_maps * patch_size(); }
  Shape weight_shape() const {
    return volumetric ? Shape{out_maps, in_maps, kernel.d, kernel.h, kernel.w}
                      : Shape{out_maps, in_maps, kernel.h, kernel.w};
  }

  /// Valid-convolution output extent; throws if the input is smaller than the kernel.
  Spatial output(const Spatial& in) const {
    if (in.d < kernel.d || in.h < kernel.h || in.w < kernel.w) {
      throw ShapeError("convolution input smaller than kernel");
    }
    return {in.d - kernel.d + 1, in.h - kernel.h + 1, in.w - kernel.w + 1};
  }

  friend bool operator==(const ConvShape&, const ConvShape&) = default;
};

/// Non-owning view over kernel weights (out, in, kd, kh, kw) and biases.
template <typename T>
struct ConvParams {
  ConvShape shape;
  std::span<const T> weights;
  std::span<const T> bias;
};

/// Gradient buffers accumulated into by conv_backward.
template <typename T>
struct ConvGrads {
  std::span<T> weights;
  std::span<T> bias;
};

template <typename T>
struct ConvLayer {
  ConvShape shape;
  std::vector<T> weights;
  std::vector<T> bias;

  explicit ConvLayer(ConvShape s) : shape(s), weights(s.weight_count(), T{0}), bias(s.out_maps, T{0}) {}
  ConvParams<T> params() const { return {shape, weights, bias}; }
};

namespace detail {

template <typename T>
void check_conv_input(const Shape& x_shape, const ConvShape& cs) {
  const auto [maps, sp] = split_map_shape(x_shape);
  if (maps != cs.in_maps) {
    throw ShapeError("convolution expects " + std::to_string(cs.in_maps) + " input maps, got " +
                     std::to_string(maps));
  }
  if ((x_shape.size() == 4) != cs.volumetric) throw ShapeError("convolution rank mismatch");
}

// cols[K x P], K = in_maps * kd * kh * kw (in that nesting), P = output positions.
template <typename T>
void im2col(const T* x, std::size_t in_maps, const Spatial& in, const Spatial& k, const Spatial& out, T* cols) {
  const std::size_t p = out.size();
  std::size_t row = 0;
  for (std::size_t c = 0; c < in_maps; ++c) {
    const T* xc = x + c * in.size();
    for (std::size_t dz = 0; dz < k.d; ++dz) {
      for (std::size_t dy = 0; dy < k.h; ++dy) {
        for (std::size_t dx = 0; dx < k.w; ++dx, ++row) {
          T* dst = cols + row * p;
          for (std::size_t oz = 0; oz < out.d; ++oz) {
            for (std::size_t oy = 0; oy < out.h; ++oy) {
              const T* src = xc + ((oz + dz) * in.h + (oy + dy)) * in.w + dx;
              std::copy(src, src + out.w, dst);
              dst += out.w;
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_acc(const T* cols, std::size_t in_maps, const Spatial& in, const Spatial& k, const Spatial& out, T* gx) {
  const std::size_t p = out.size();
  std::size_t row = 0;
  for (std::size_t c = 0; c < in_maps; ++c) {
    T* gc = gx + c * in.size();
    for (std::size_t dz = 0; dz < k.d; ++dz) {
      for (std::size_t dy = 0; dy < k.h; ++dy) {
        for (std::size_t dx = 0; dx < k.w; ++dx, ++row) {
          const T* src = cols + row * p;
          for (std::size_t oz = 0; oz < out.d; ++oz) {
            for (std::size_t oy = 0; oy < out.h; ++oy) {
              T* dst = gc + ((oz + dz) * in.h + (oy + dy)) * in.w + dx;
              for (std::size_t ox = 0; ox < out.w; ++ox) dst[ox] += src[ox];
              src += out.w;
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

/// out[k] = sum_m xcorr(x[m], W[k][m]) + b[k]; kernels are not flipped.
template <typename T>
Tensor<T> conv_forward(const Tensor<T>& x, const ConvParams<T>& layer) {
  const ConvShape& cs = layer.shape;
  detail::check_conv_input<T>(x.shape(), cs);
  if (layer.weights.size() != cs.weight_count() || layer.bias.size() != cs.out_maps) {
    throw ShapeError("convolution parameter length mismatch");
  }
  const Spatial in = split_map_shape(x.shape()).second;
  const Spatial out = cs.output(in);
  const std::size_t p = out.size();
  const std::size_t k = cs.patch_size();
  auto& cols = detail::scratch<T>(k * p);
  detail::im2col(x.data().data(), cs.in_maps, in, cs.kernel, out, cols.data());

  Tensor<T> y(map_shape(cs.out_maps, out, cs.volumetric));
  T* yd = y.data().data();
  for (std::size_t o = 0; o < cs.out_maps; ++o) std::fill(yd + o * p, yd + (o + 1) * p, layer.bias[o]);
  detail::gemm_nn_acc(cs.out_maps, p, k, layer.weights.data(), cols.data(), yd);
  return y;
}

/// Accumulates dL/dW and dL/db into grads and returns dL/dx (empty when
/// need_grad_x is false), where upstream = dL/d(conv_forward(x)).
template <typename T>
Tensor<T> conv_backward_accumulate(const Tensor<T>& x, const ConvParams<T>& layer, const Tensor<T>& upstream,
                                   const ConvGrads<T>& grads, bool need_grad_x = true) {
  const ConvShape& cs = layer.shape;
  detail::check_conv_input<T>(x.shape(), cs);
  const Spatial in = split_map_shape(x.shape()).second;
  const Spatial out = cs.output(in);
  if (upstream.shape() != map_shape(cs.out_maps, out, cs.volumetric)) {
    throw ShapeError("convolution upstream shape " + shape_string(upstream.shape()) + " does not match output");
  }
  if (grads.weights.size() != cs.weight_count() || grads.bias.size() != cs.out_maps) {
    throw ShapeError("convolution gradient buffer length mismatch");
  }
  const std::size_t p = out.size();
  const std::size_t k = cs.patch_size();
  const T* up = upstream.data().data();

  for (std::size_t o = 0; o < cs.out_maps; ++o) {
    T acc{0};
    for (std::size_t j = 0; j < p; ++j) acc += up[o * p + j];
    grads.bias[o] += acc;
  }

  auto& cols = detail::scratch<T>(k * p);
  detail::im2col(x.data().data(), cs.in_maps, in, cs.kernel, out, cols.data());
  detail::gemm_nt_acc(cs.out_maps, k, p, up, cols.data(), grads.weights.data());

  if (!need_grad_x) return {};
  std::fill(cols.begin(), cols.end(), T{0});
  detail::gemm_tn_acc(k, p, cs.out_maps, layer.weights.data(), up, cols.data());
  Tensor<T> gx(x.shape());
  detail::col2im_acc(cols.data(), cs.in_maps, in, cs.kernel, out, gx.data().data());
  return gx;
}

template <typename T>
struct ConvBackward {
  Tensor<T> grad_x;
  std::vector<T> grad_weights;
  std::vector<T> grad_bias;
};

template <typename T>
ConvBackward<T> conv_backward(const Tensor<T>& x, const ConvParams<T>& layer, const Tensor<T>& upstream) {
  ConvBackward<T> r;
  r.grad_weights.assign(layer.shape.weight_count(), T{0});
  r.grad_bias.assign(layer.shape.out_maps, T{0});
  r.grad_x = conv_backward_accumulate(x, layer, upstream, ConvGrads<T>{r.grad_weights, r.grad_bias}, true);
  return r;
}

// ---------------------------------------------------------------------------
// Max pooling

enum class PoolEdge {
  Strict,    ///< every spatial side must be divisible by the window
  Truncate,  ///< trailing rows/columns that do not fill a window are dropped
};

template <typename T>
struct PoolResult {
  Tensor<T> output;
  std::vector<std::size_t> argmax;  ///< input linear index feeding each output
  Shape input_shape;
};

/// Non-overlapping p x p (or p x p x p for volumetric maps) windows with stride p.
/// Ties resolve to the lowest input linear index.
template <typename T>
PoolResult<T> maxpool_forward(const Tensor<T>& x, std::size_t p, PoolEdge edge = PoolEdge::Strict) {
  if (p == 0) throw ShapeError("pool window must be positive");
  const auto [maps, in] = split_map_shape(x.shape());
  const bool volumetric = x.rank() == 4;
  const std::size_t pd = volumetric ? p : 1;
  if (edge == PoolEdge::Strict && (in.d % pd != 0 || in.h % p != 0 || in.w % p != 0)) {
    throw ShapeError("pool window " + std::to_string(p) + " does not divide input " + shape_string(x.shape()));
  }
  const Spatial out{in.d / pd, in.h / p, in.w / p};
  if (out.size() == 0) throw ShapeError("pool window larger than input " + shape_string(x.shape()));

  PoolResult<T> r;
  r.input_shape = x.shape();
  r.output = Tensor<T>(map_shape(maps, out, volumetric));
  r.argmax.resize(r.output.size());
  const T* xd = x.data().data();
  std::size_t o_idx = 0;
  for (std::size_t m = 0; m < maps; ++m) {
    const std::size_t base = m * in.size();
    for (std::size_t oz = 0; oz < out.d; ++oz) {
      for (std::size_t oy = 0; oy < out.h; ++oy) {
        for (std::size_t ox = 0; ox < out.w; ++ox, ++o_idx) {
          std::size_t best = base + ((oz * pd) * in.h + oy * p) * in.w + ox * p;
          T best_v = xd[best];
          for (std::size_t dz = 0; dz < pd; ++dz) {
            for (std::size_t dy = 0; dy < p; ++dy) {
              const std::size_t row = base + ((oz * pd + dz) * in.h + oy * p + dy) * in.w + ox * p;
              for (std::size_t dx = 0; dx < p; ++dx) {
                if (xd[row + dx] > best_v) {
                  best_v = xd[row + dx];
                  best = row + dx;
                }
              }
            }
          }
          r.output[o_idx] = best_v;
          r.argmax[o_idx] = best;
        }
      }
    }
  }
  return r;
}

template <typename T>
Tensor<T> maxpool_backward(const std::vector<std::size_t>& argmax, const Shape& input_shape,
                           const Tensor<T>& upstream) {
  if (upstream.size() != argmax.size()) throw ShapeError("pool upstream length does not match argmax table");
  Tensor<T> gx(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += upstream[i];
  return gx;
}

// ---------------------------------------------------------------------------
// Fully connected

template <typename T>
struct FullParams {
  std::size_t n_in = 0;
  std::size_t n_out = 0;
  std::span<const T> weights;  ///< row-major (n_out, n_in)
  std::span<const T> bias;
};

template <typename T>
struct FullGrads {
  std::span<T> weights;
  std::span<T> bias;
};

template <typename T>
struct FullLayer {
  std::size_t n_in;
  std::size_t n_out;
  std::vector<T> weights;
  std::vector<T> bias;

  FullLayer(std::size_t in, std::size_t out) : n_in(in), n_out(out), weights(in * out, T{0}), bias(out, T{0}) {}
  FullParams<T> params() const { return {n_in, n_out, weights, bias}; }
};

template <typename T>
Tensor<T> full_forward(const Tensor<T>& x, const FullParams<T>& layer) {
  if (x.size() != layer.n_in) {
    throw ShapeError("fully connected layer expects " + std::to_string(layer.n_in) + " inputs, got " +
                     std::to_string(x.size()));
  }
  if (layer.weights.size() != layer.n_in * layer.n_out || layer.bias.size() != layer.n_out) {
    throw ShapeError("fully connected parameter length mismatch");
  }
  Tensor<T> y(Shape{layer.n_out});
  const T* xd = x.data().data();
  for (std::size_t o = 0; o < layer.n_out; ++o) {
    const T* row = layer.weights.data() + o * layer.n_in;
    T acc{0};
    for (std::size_t i = 0; i < layer.n_in; ++i) acc += row[i] * xd[i];
    y[o] = acc + layer.bias[o];
  }
  return y;
}

template <typename T>
Tensor<T> full_backward_accumulate(const Tensor<T>& x, const FullParams<T>& layer, const Tensor<T>& upstream,
                                   const FullGrads<T>& grads, bool need_grad_x = true) {
  if (x.size() != layer.n_in || upstream.size() != layer.n_out) {
    throw ShapeError("fully connected backward shape mismatch");
  }
  if (grads.weights.size() != layer.n_in * layer.n_out || grads.bias.size() != layer.n_out) {
    throw ShapeError("fully connected gradient buffer length mismatch");
  }
  const T* xd = x.data().data();
  for (std::size_t o = 0; o < layer.n_out; ++o) {
    const T u = upstream[o];
    grads.bias[o] += u;
    if (u == T{0}) continue;
    T* grow = grads.weights.data() + o * layer.n_in;
    for (std::size_t i = 0; i < layer.n_in; ++i) grow[i] += u * xd[i];
  }
  if (!need_grad_x) return {};
  Tensor<T> gx(x.shape());
  T* gd = gx.data().data();
  for (std::size_t o = 0; o < layer.n_out; ++o) {
    const T u = upstream[o];
    if (u == T{0}) continue;
    const T* row = layer.weights.data() + o * layer.n_in;
    for (std::size_t i = 0; i < layer.n_in; ++i) gd[i] += u * row[i];
  }
  return gx;
}

template <typename T>
struct FullBackward {
  Tensor<T> grad_x;
  std::vector<T> grad_weights;
  std::vector<T> grad_bias;
};

template <typename T>
FullBackward<T> full_backward(const Tensor<T>& x, const FullParams<T>& layer, const Tensor<T>& upstream) {
  FullBackward<T> r;
  r.grad_weights.assign(layer.n_in * layer.n_out, T{0});
  r.grad_bias.assign(layer.n_out, T{0});
  r.grad_x = full_backward_accumulate(x, layer, upstream, FullGrads<T>{r.grad_weights, r.grad_bias}, true);
  return r;
}

// ---------------------------------------------------------------------------
// Activations

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (auto& v : y.storage()) v = v > T{0} ? v : T{0};
  return y;
}

template <typename T>
void relu_inplace(Tensor<T>& x) {
  for (auto& v : x.storage()) v = v > T{0} ? v : T{0};
}

/// Passes upstream where x > 0; the subgradient at 0 is 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& upstream) {
  if (x.size() != upstream.size()) throw ShapeError("relu backward length mismatch");
  Tensor<T> g(upstream.shape());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = x[i] > T{0} ? upstream[i] : T{0};
  return g;
}

/// Max-subtracted softmax.
template <typename T>
std::vector<T> softmax(std::span<const T> z) {
  std::vector<T> out(z.size());
  if (z.empty()) return out;
  const T zmax = *std::max_element(z.begin(), z.end());
  T total{0};
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp(z[i] - zmax);
    total += out[i];
  }
  for (auto& v : out) v /= total;
  return out;
}

// ---------------------------------------------------------------------------
// Concatenation

template <typename T>
Tensor<T> concat(const std::vector<const Tensor<T>*>& parts) {
  std::size_t total = 0;
  for (const auto* p : parts) total += p->size();
  std::vector<T> data;
  data.reserve(total);
  for (const auto* p : parts) data.insert(data.end(), p->data().begin(), p->data().end());
  return Tensor<T>(Shape{total}, std::move(data));
}

/// Inverse of concat for gradients: cuts upstream into the given part shapes.
template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& upstream, const std::vector<Shape>& part_shapes) {
  std::vector<Tensor<T>> out;
  out.reserve(part_shapes.size());
  std::size_t offset = 0;
  for (const auto& s : part_shapes) {
    const std::size_t n = shape_size(s);
    if (offset + n > upstream.size()) throw ShapeError("split exceeds upstream length");
    out.emplace_back(s, std::vector<T>(upstream.data().begin() + static_cast<std::ptrdiff_t>(offset),
                                       upstream.data().begin() + static_cast<std::ptrdiff_t>(offset + n)));
    offset += n;
  }
  if (offset != upstream.size()) throw ShapeError("split does not consume upstream");
  return out;
}

}  // namespace vseg

#endif  // VSEG_LAYERS_HPP
