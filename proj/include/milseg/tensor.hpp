#pragma once

// Dense tensors with reverse-mode automatic differentiation, covering
// exactly the operations the MIL-net needs. Scalar type is a template
// parameter: training runs at float, gradient checks run the identical
// code at double.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "milseg/errors.hpp"

namespace milseg {

using Shape = std::vector<int>;

inline long long shape_numel(const Shape& s) {
  long long n = 1;
  for (int d : s) {
    if (d <= 0) throw DimensionError("non-positive dimension in shape");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

enum class Mode { kTrain, kInference };

template <typename T>
class Tensor {
 public:
  struct Impl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until needed
    bool requires_grad = false;
    std::vector<std::shared_ptr<Impl>> parents;
    // Reads this->grad, accumulates into parent grads. Present only on
    // op outputs that participate in a differentiable graph.
    std::function<void(Impl&)> backprop;

    bool needs_grad() const { return requires_grad || backprop != nullptr; }
    std::vector<T>& ensure_grad() {
      if (grad.empty()) grad.assign(data.size(), T(0));
      return grad;
    }
  };

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->data.assign(static_cast<size_t>(shape_numel(shape)), T(0));
    t.impl_->shape = std::move(shape);
    t.impl_->requires_grad = requires_grad;
    return t;
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.data().begin(), t.data().end(), value);
    return t;
  }

  static Tensor from_data(Shape shape, std::vector<T> values,
                          bool requires_grad = false) {
    if (static_cast<long long>(values.size()) != shape_numel(shape))
      throw DimensionError("data length does not match shape " +
                           shape_str(shape));
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(values);
    t.impl_->requires_grad = requires_grad;
    return t;
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int dim(int i) const { return impl_->shape.at(static_cast<size_t>(i)); }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  long long size() const { return static_cast<long long>(impl_->data.size()); }

  std::vector<T>& data() { return impl_->data; }
  const std::vector<T>& data() const { return impl_->data; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool b) { impl_->requires_grad = b; }
  bool is_leaf() const { return impl_->backprop == nullptr; }

  bool has_grad() const { return impl_->grad.size() == impl_->data.size(); }

  // Gradient buffer; allocated (zero-filled) on first access.
  std::vector<T>& grad() { return impl_->ensure_grad(); }
  const std::vector<T>& grad() const {
    return const_cast<Impl*>(impl_.get())->ensure_grad();
  }
  void zero_grad() {
    if (!impl_->grad.empty())
      std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
  }

  std::shared_ptr<Impl> impl() const { return impl_; }

  // Detached copy of the values (no graph linkage).
  Tensor detached_copy() const {
    return from_data(impl_->shape, impl_->data, false);
  }

 private:
  std::shared_ptr<Impl> impl_;
};

namespace detail {

template <typename T>
bool any_needs_grad(std::initializer_list<const Tensor<T>*> ts) {
  for (const Tensor<T>* t : ts)
    if (t->impl()->needs_grad()) return true;
  return false;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate
// additively across calls; intermediate gradients are re-derived each call.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.size() != 1)
    throw UsageError("backward requires a scalar tensor, got shape " +
                     shape_str(loss.shape()));
  using Impl = typename Tensor<T>::Impl;

  // Topological order via iterative post-order DFS over parents.
  std::vector<Impl*> order;
  std::unordered_set<Impl*> seen;
  std::vector<std::pair<Impl*, size_t>> stack;
  stack.emplace_back(loss.impl().get(), 0);
  seen.insert(loss.impl().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Impl* p = node->parents[next++].get();
      if (seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  // order is children-after-parents reversed; iterate from the back.
  // Non-leaf grads are scratch space: reset them before this sweep.
  for (Impl* n : order)
    if (n->backprop && !n->grad.empty())
      std::fill(n->grad.begin(), n->grad.end(), T(0));
  loss.impl()->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Impl* n = *it;
    if (n->backprop) n->backprop(*n);
  }
}

// ---------------------------------------------------------------------------
// Elementwise and reduction ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw DimensionError("add: shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  for (long long i = 0; i < a.size(); ++i)
    out.data()[i] = a.data()[i] + b.data()[i];
  if (detail::any_needs_grad<T>({&a, &b})) {
    auto ai = a.impl(), bi = b.impl();
    out.impl()->parents = {ai, bi};
    out.impl()->backprop = [ai, bi](typename Tensor<T>::Impl& self) {
      if (ai->needs_grad()) {
        auto& g = ai->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
      if (bi->needs_grad()) {
        auto& g = bi->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw DimensionError("mul: shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  for (long long i = 0; i < a.size(); ++i)
    out.data()[i] = a.data()[i] * b.data()[i];
  if (detail::any_needs_grad<T>({&a, &b})) {
    auto ai = a.impl(), bi = b.impl();
    out.impl()->parents = {ai, bi};
    out.impl()->backprop = [ai, bi](typename Tensor<T>::Impl& self) {
      if (ai->needs_grad()) {
        auto& g = ai->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bi->data[i];
      }
      if (bi->needs_grad()) {
        auto& g = bi->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * ai->data[i];
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  Tensor<T> out = Tensor<T>::zeros({1});
  out.data()[0] = std::accumulate(a.data().begin(), a.data().end(), T(0));
  if (a.impl()->needs_grad()) {
    auto ai = a.impl();
    out.impl()->parents = {ai};
    out.impl()->backprop = [ai](typename Tensor<T>::Impl& self) {
      auto& g = ai->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0];
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

// max(x, slope*x); slope = 0 gives plain ReLU. Subgradient at 0 is slope.
template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (long long i = 0; i < x.size(); ++i) {
    T v = x.data()[i];
    out.data()[i] = v > T(0) ? v : slope * v;
  }
  if (x.impl()->needs_grad()) {
    auto xi = x.impl();
    out.impl()->parents = {xi};
    out.impl()->backprop = [xi, slope](typename Tensor<T>::Impl& self) {
      auto& g = xi->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i)
        g[i] += self.grad[i] * (xi->data[i] > T(0) ? T(1) : slope);
    };
  }
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return leaky_relu(x, T(0));
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

template <typename T>
struct ConvParams {
  Tensor<T> weight;  // out_channels x in_channels x m x m
  Tensor<T> bias;    // out_channels
  int stride = 2;
  int padding = 1;
};

namespace detail {

template <typename T>
void check_conv_args(const Tensor<T>& x, const ConvParams<T>& p,
                     const char* op) {
  if (x.ndim() != 4)
    throw DimensionError(std::string(op) + ": input must be 4-D, got " +
                         shape_str(x.shape()));
  if (p.weight.ndim() != 4)
    throw DimensionError(std::string(op) + ": weight must be 4-D");
  if (p.weight.dim(2) != p.weight.dim(3))
    throw DimensionError(std::string(op) + ": kernel must be square");
  if (p.bias.ndim() != 1 || p.bias.dim(0) != p.weight.dim(0))
    throw DimensionError(std::string(op) +
                         ": bias length must equal out_channels");
  if (p.stride < 1) throw ConfigError(std::string(op) + ": stride must be >= 1");
  if (p.padding < 0)
    throw ConfigError(std::string(op) + ": padding must be >= 0");
}

}  // namespace detail

// Strided 2-D convolution (cross-correlation layout), pre-activation:
// out[n,o,i,j] = bias[o] + sum_{c,p,q} w[o,c,p,q] * x[n,c,i*s+p-pad,j*s+q-pad].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvParams<T>& params) {
  detail::check_conv_args(x, params, "conv2d");
  const int batch = x.dim(0), in_ch = x.dim(1), in_h = x.dim(2), in_w = x.dim(3);
  const int out_ch = params.weight.dim(0), m = params.weight.dim(2);
  const int s = params.stride, pad = params.padding;
  if (params.weight.dim(1) != in_ch)
    throw DimensionError("conv2d: input channel axis " + std::to_string(in_ch) +
                         " does not match weight in_channels " +
                         std::to_string(params.weight.dim(1)));
  if (in_h + 2 * pad < m || in_w + 2 * pad < m)
    throw DimensionError("conv2d: spatial axes smaller than kernel");
  const int out_h = (in_h + 2 * pad - m) / s + 1;
  const int out_w = (in_w + 2 * pad - m) / s + 1;

  Tensor<T> out = Tensor<T>::zeros({batch, out_ch, out_h, out_w});
  const T* xd = x.data().data();
  const T* wd = params.weight.data().data();
  const T* bd = params.bias.data().data();
  T* od = out.data().data();
  for (int n = 0; n < batch; ++n)
    for (int o = 0; o < out_ch; ++o)
      for (int i = 0; i < out_h; ++i)
        for (int j = 0; j < out_w; ++j) {
          T acc = bd[o];
          for (int c = 0; c < in_ch; ++c) {
            const T* xc = xd + ((static_cast<long long>(n) * in_ch + c) * in_h) * in_w;
            const T* wc = wd + ((static_cast<long long>(o) * in_ch + c) * m) * m;
            for (int p = 0; p < m; ++p) {
              const int ih = i * s + p - pad;
              if (ih < 0 || ih >= in_h) continue;
              for (int q = 0; q < m; ++q) {
                const int iw = j * s + q - pad;
                if (iw < 0 || iw >= in_w) continue;
                acc += wc[p * m + q] * xc[ih * in_w + iw];
              }
            }
          }
          od[((static_cast<long long>(n) * out_ch + o) * out_h + i) * out_w + j] = acc;
        }

  if (detail::any_needs_grad<T>({&x, &params.weight, &params.bias})) {
    auto xi = x.impl(), wi = params.weight.impl(), bi = params.bias.impl();
    out.impl()->parents = {xi, wi, bi};
    out.impl()->backprop = [xi, wi, bi, batch, in_ch, in_h, in_w, out_ch, m, s,
                            pad, out_h, out_w](typename Tensor<T>::Impl& self) {
      const bool need_x = xi->needs_grad();
      const bool need_w = wi->needs_grad();
      const bool need_b = bi->needs_grad();
      T* gx = need_x ? xi->ensure_grad().data() : nullptr;
      T* gw = need_w ? wi->ensure_grad().data() : nullptr;
      T* gb = need_b ? bi->ensure_grad().data() : nullptr;
      const T* xd = xi->data.data();
      const T* wd = wi->data.data();
      const T* gy = self.grad.data();
      for (int n = 0; n < batch; ++n)
        for (int o = 0; o < out_ch; ++o)
          for (int i = 0; i < out_h; ++i)
            for (int j = 0; j < out_w; ++j) {
              const T gv = gy[((static_cast<long long>(n) * out_ch + o) * out_h + i) * out_w + j];
              if (gv == T(0)) continue;
              if (need_b) gb[o] += gv;
              for (int c = 0; c < in_ch; ++c) {
                const long long xoff = ((static_cast<long long>(n) * in_ch + c) * in_h) * in_w;
                const long long woff = ((static_cast<long long>(o) * in_ch + c) * m) * m;
                for (int p = 0; p < m; ++p) {
                  const int ih = i * s + p - pad;
                  if (ih < 0 || ih >= in_h) continue;
                  for (int q = 0; q < m; ++q) {
                    const int iw = j * s + q - pad;
                    if (iw < 0 || iw >= in_w) continue;
                    if (need_x) gx[xoff + ih * in_w + iw] += wd[woff + p * m + q] * gv;
                    if (need_w) gw[woff + p * m + q] += xd[xoff + ih * in_w + iw] * gv;
                  }
                }
              }
            }
    };
  }
  return out;
}

// Transposed convolution (adjoint of conv2d in the spatial map):
// out[n,o,i*s+p-pad,j*s+q-pad] += w[o,c,p,q] * x[n,c,i,j], plus bias.
// Output spatial size is (H-1)*stride - 2*padding + m.
template <typename T>
Tensor<T> deconv2d(const Tensor<T>& x, const ConvParams<T>& params) {
  detail::check_conv_args(x, params, "deconv2d");
  const int batch = x.dim(0), in_ch = x.dim(1), in_h = x.dim(2), in_w = x.dim(3);
  const int out_ch = params.weight.dim(0), m = params.weight.dim(2);
  const int s = params.stride, pad = params.padding;
  if (params.weight.dim(1) != in_ch)
    throw DimensionError("deconv2d: input channel axis " + std::to_string(in_ch) +
                         " does not match weight in_channels " +
                         std::to_string(params.weight.dim(1)));
  const int out_h = (in_h - 1) * s - 2 * pad + m;
  const int out_w = (in_w - 1) * s - 2 * pad + m;
  if (out_h < 1 || out_w < 1)
    throw DimensionError("deconv2d: output spatial size would be < 1");

  Tensor<T> out = Tensor<T>::zeros({batch, out_ch, out_h, out_w});
  const T* xd = x.data().data();
  const T* wd = params.weight.data().data();
  const T* bd = params.bias.data().data();
  T* od = out.data().data();
  for (long long n = 0; n < batch; ++n)
    for (int o = 0; o < out_ch; ++o) {
      T* oc = od + ((n * out_ch + o) * out_h) * out_w;
      for (long long i = 0; i < static_cast<long long>(out_h) * out_w; ++i)
        oc[i] = bd[o];
    }
  for (int n = 0; n < batch; ++n)
    for (int c = 0; c < in_ch; ++c) {
      const T* xc = xd + ((static_cast<long long>(n) * in_ch + c) * in_h) * in_w;
      for (int o = 0; o < out_ch; ++o) {
        const T* wc = wd + ((static_cast<long long>(o) * in_ch + c) * m) * m;
        T* oc = od + ((static_cast<long long>(n) * out_ch + o) * out_h) * out_w;
        for (int i = 0; i < in_h; ++i)
          for (int j = 0; j < in_w; ++j) {
            const T xv = xc[i * in_w + j];
            if (xv == T(0)) continue;
            for (int p = 0; p < m; ++p) {
              const int u = i * s + p - pad;
              if (u < 0 || u >= out_h) continue;
              for (int q = 0; q < m; ++q) {
                const int v = j * s + q - pad;
                if (v < 0 || v >= out_w) continue;
                oc[u * out_w + v] += wc[p * m + q] * xv;
              }
            }
          }
      }
    }

  if (detail::any_needs_grad<T>({&x, &params.weight, &params.bias})) {
    auto xi = x.impl(), wi = params.weight.impl(), bi = params.bias.impl();
    out.impl()->parents = {xi, wi, bi};
    out.impl()->backprop = [xi, wi, bi, batch, in_ch, in_h, in_w, out_ch, m, s,
                            pad, out_h, out_w](typename Tensor<T>::Impl& self) {
      const bool need_x = xi->needs_grad();
      const bool need_w = wi->needs_grad();
      const bool need_b = bi->needs_grad();
      T* gx = need_x ? xi->ensure_grad().data() : nullptr;
      T* gw = need_w ? wi->ensure_grad().data() : nullptr;
      T* gb = need_b ? bi->ensure_grad().data() : nullptr;
      const T* xd = xi->data.data();
      const T* wd = wi->data.data();
      const T* gy = self.grad.data();
      if (need_b)
        for (int n = 0; n < batch; ++n)
          for (int o = 0; o < out_ch; ++o) {
            const T* gc = gy + ((static_cast<long long>(n) * out_ch + o) * out_h) * out_w;
            for (long long i = 0; i < static_cast<long long>(out_h) * out_w; ++i)
              gb[o] += gc[i];
          }
      if (need_x || need_w)
        for (int n = 0; n < batch; ++n)
          for (int c = 0; c < in_ch; ++c) {
            const long long xoff = ((static_cast<long long>(n) * in_ch + c) * in_h) * in_w;
            for (int o = 0; o < out_ch; ++o) {
              const long long woff = ((static_cast<long long>(o) * in_ch + c) * m) * m;
              const T* gc = gy + ((static_cast<long long>(n) * out_ch + o) * out_h) * out_w;
              for (int i = 0; i < in_h; ++i)
                for (int j = 0; j < in_w; ++j) {
                  T acc = T(0);
                  const T xv = xd[xoff + i * in_w + j];
                  for (int p = 0; p < m; ++p) {
                    const int u = i * s + p - pad;
                    if (u < 0 || u >= out_h) continue;
                    for (int q = 0; q < m; ++q) {
                      const int v = j * s + q - pad;
                      if (v < 0 || v >= out_w) continue;
                      const T gv = gc[u * out_w + v];
                      acc += wd[woff + p * m + q] * gv;
                      if (need_w) gw[woff + p * m + q] += xv * gv;
                    }
                  }
                  if (need_x) gx[xoff + i * in_w + j] += acc;
                }
            }
          }
    };
  }
  return out;
}

// Center crop of the two spatial axes; backward zero-pads.
template <typename T>
Tensor<T> crop2d(const Tensor<T>& x, int top, int left, int out_h, int out_w) {
  if (x.ndim() != 4) throw DimensionError("crop2d: input must be 4-D");
  const int batch = x.dim(0), ch = x.dim(1), in_h = x.dim(2), in_w = x.dim(3);
  if (top < 0 || left < 0 || top + out_h > in_h || left + out_w > in_w)
    throw DimensionError("crop2d: crop window exceeds input spatial axes");
  Tensor<T> out = Tensor<T>::zeros({batch, ch, out_h, out_w});
  for (long long nc = 0; nc < static_cast<long long>(batch) * ch; ++nc)
    for (int i = 0; i < out_h; ++i)
      for (int j = 0; j < out_w; ++j)
        out.data()[(nc * out_h + i) * out_w + j] =
            x.data()[(nc * in_h + (i + top)) * in_w + (j + left)];
  if (x.impl()->needs_grad()) {
    auto xi = x.impl();
    out.impl()->parents = {xi};
    out.impl()->backprop = [xi, batch, ch, in_h, in_w, top, left, out_h,
                            out_w](typename Tensor<T>::Impl& self) {
      auto& g = xi->ensure_grad();
      for (long long nc = 0; nc < static_cast<long long>(batch) * ch; ++nc)
        for (int i = 0; i < out_h; ++i)
          for (int j = 0; j < out_w; ++j)
            g[(nc * in_h + (i + top)) * in_w + (j + left)] +=
                self.grad[(nc * out_h + i) * out_w + j];
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

template <typename T>
struct BatchNormState {
  Tensor<T> scale;  // learnable, per channel
  Tensor<T> shift;  // learnable, per channel
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T momentum = T(0.9);
  T epsilon = T(1e-5);

  static BatchNormState make(int channels, T momentum = T(0.9),
                             T epsilon = T(1e-5)) {
    BatchNormState s;
    s.scale = Tensor<T>::full({channels}, T(1), true);
    s.shift = Tensor<T>::zeros({channels}, true);
    s.running_mean.assign(channels, T(0));
    s.running_var.assign(channels, T(1));
    s.momentum = momentum;
    s.epsilon = epsilon;
    return s;
  }
};

// Training mode normalizes with batch statistics (biased variance) and
// updates running stats as running = momentum*running + (1-momentum)*batch.
// Inference mode uses running stats only and is deterministic.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, BatchNormState<T>& state, Mode mode) {
  if (x.ndim() != 4) throw DimensionError("batch_norm: input must be 4-D");
  const int batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (state.scale.dim(0) != ch)
    throw DimensionError("batch_norm: channel axis " + std::to_string(ch) +
                         " does not match state channels " +
                         std::to_string(state.scale.dim(0)));
  const long long per_ch = static_cast<long long>(batch) * h * w;
  const long long plane = static_cast<long long>(h) * w;

  std::vector<T> mean(ch), var(ch);
  if (mode == Mode::kTrain) {
    for (int c = 0; c < ch; ++c) {
      T mu = T(0);
      for (int n = 0; n < batch; ++n) {
        const T* p = x.data().data() + ((static_cast<long long>(n) * ch + c) * plane);
        for (long long i = 0; i < plane; ++i) mu += p[i];
      }
      mu /= static_cast<T>(per_ch);
      T v = T(0);
      for (int n = 0; n < batch; ++n) {
        const T* p = x.data().data() + ((static_cast<long long>(n) * ch + c) * plane);
        for (long long i = 0; i < plane; ++i) {
          const T d = p[i] - mu;
          v += d * d;
        }
      }
      v /= static_cast<T>(per_ch);
      mean[c] = mu;
      var[c] = v;
      state.running_mean[c] =
          state.momentum * state.running_mean[c] + (T(1) - state.momentum) * mu;
      state.running_var[c] =
          state.momentum * state.running_var[c] + (T(1) - state.momentum) * v;
    }
  } else {
    for (int c = 0; c < ch; ++c) {
      mean[c] = state.running_mean[c];
      var[c] = state.running_var[c];
    }
  }

  std::vector<T> inv_std(ch);
  for (int c = 0; c < ch; ++c)
    inv_std[c] = T(1) / std::sqrt(var[c] + state.epsilon);

  Tensor<T> out = Tensor<T>::zeros(x.shape());
  std::vector<T> xhat(static_cast<size_t>(x.size()));
  const T* gamma = state.scale.data().data();
  const T* beta = state.shift.data().data();
  for (int n = 0; n < batch; ++n)
    for (int c = 0; c < ch; ++c) {
      const long long off = (static_cast<long long>(n) * ch + c) * plane;
      for (long long i = 0; i < plane; ++i) {
        const T xn = (x.data()[off + i] - mean[c]) * inv_std[c];
        xhat[off + i] = xn;
        out.data()[off + i] = gamma[c] * xn + beta[c];
      }
    }

  if (detail::any_needs_grad<T>({&x, &state.scale, &state.shift})) {
    auto xi = x.impl(), gi = state.scale.impl(), si = state.shift.impl();
    out.impl()->parents = {xi, gi, si};
    const bool train = (mode == Mode::kTrain);
    out.impl()->backprop = [xi, gi, si, batch, ch, plane, per_ch,
                            inv_std = std::move(inv_std),
                            xhat = std::move(xhat),
                            train](typename Tensor<T>::Impl& self) {
      const bool need_x = xi->needs_grad();
      T* gx = need_x ? xi->ensure_grad().data() : nullptr;
      T* gg = gi->needs_grad() ? gi->ensure_grad().data() : nullptr;
      T* gb = si->needs_grad() ? si->ensure_grad().data() : nullptr;
      const T* gamma = gi->data.data();
      const T* gy = self.grad.data();
      for (int c = 0; c < ch; ++c) {
        T sum_gy = T(0), sum_gy_xhat = T(0);
        for (int n = 0; n < batch; ++n) {
          const long long off = (static_cast<long long>(n) * ch + c) * plane;
          for (long long i = 0; i < plane; ++i) {
            sum_gy += gy[off + i];
            sum_gy_xhat += gy[off + i] * xhat[off + i];
          }
        }
        if (gg) gg[c] += sum_gy_xhat;
        if (gb) gb[c] += sum_gy;
        if (!need_x) continue;
        const T k = gamma[c] * inv_std[c];
        if (train) {
          const T mg = sum_gy / static_cast<T>(per_ch);
          const T mgx = sum_gy_xhat / static_cast<T>(per_ch);
          for (int n = 0; n < batch; ++n) {
            const long long off = (static_cast<long long>(n) * ch + c) * plane;
            for (long long i = 0; i < plane; ++i)
              gx[off + i] += k * (gy[off + i] - mg - xhat[off + i] * mgx);
          }
        } else {
          for (int n = 0; n < batch; ++n) {
            const long long off = (static_cast<long long>(n) * ch + c) * plane;
            for (long long i = 0; i < plane; ++i) gx[off + i] += k * gy[off + i];
          }
        }
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

// Inverted dropout: training zeroes elements with probability `rate` and
// scales survivors by 1/(1-rate); inference is the identity.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Mode mode,
                  std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw ConfigError("dropout: rate must be in [0, 1)");
  if (mode == Mode::kInference || rate == 0.0) {
    Tensor<T> out = Tensor<T>::from_data(x.shape(), x.data());
    if (x.impl()->needs_grad()) {
      auto xi = x.impl();
      out.impl()->parents = {xi};
      out.impl()->backprop = [xi](typename Tensor<T>::Impl& self) {
        auto& g = xi->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      };
    }
    return out;
  }
  const T keep_scale = T(1) / T(1.0 - rate);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<T> mask(static_cast<size_t>(x.size()));
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (long long i = 0; i < x.size(); ++i) {
    mask[i] = uni(rng) < rate ? T(0) : keep_scale;
    out.data()[i] = x.data()[i] * mask[i];
  }
  if (x.impl()->needs_grad()) {
    auto xi = x.impl();
    out.impl()->parents = {xi};
    out.impl()->backprop = [xi, mask = std::move(mask)](typename Tensor<T>::Impl& self) {
      auto& g = xi->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Structure ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 4 || b.ndim() != 4)
    throw DimensionError("concat_channels: inputs must be 4-D");
  if (a.dim(0) != b.dim(0))
    throw DimensionError("concat_channels: batch axis mismatch");
  if (a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw DimensionError("concat_channels: spatial axes mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const int batch = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const long long plane = static_cast<long long>(a.dim(2)) * a.dim(3);
  Tensor<T> out = Tensor<T>::zeros({batch, ca + cb, a.dim(2), a.dim(3)});
  for (int n = 0; n < batch; ++n) {
    std::copy_n(a.data().data() + static_cast<long long>(n) * ca * plane, ca * plane,
                out.data().data() + static_cast<long long>(n) * (ca + cb) * plane);
    std::copy_n(b.data().data() + static_cast<long long>(n) * cb * plane, cb * plane,
                out.data().data() + (static_cast<long long>(n) * (ca + cb) + ca) * plane);
  }
  if (detail::any_needs_grad<T>({&a, &b})) {
    auto ai = a.impl(), bi = b.impl();
    out.impl()->parents = {ai, bi};
    out.impl()->backprop = [ai, bi, batch, ca, cb, plane](typename Tensor<T>::Impl& self) {
      for (int n = 0; n < batch; ++n) {
        const T* g = self.grad.data() + static_cast<long long>(n) * (ca + cb) * plane;
        if (ai->needs_grad()) {
          auto& ga = ai->ensure_grad();
          for (long long i = 0; i < ca * plane; ++i)
            ga[static_cast<long long>(n) * ca * plane + i] += g[i];
        }
        if (bi->needs_grad()) {
          auto& gb = bi->ensure_grad();
          for (long long i = 0; i < cb * plane; ++i)
            gb[static_cast<long long>(n) * cb * plane + i] += g[ca * plane + i];
        }
      }
    };
  }
  return out;
}

// Spatial mean per channel: N x C x H x W -> N x C.
template <typename T>
Tensor<T> global_average_pool(const Tensor<T>& x) {
  if (x.ndim() != 4)
    throw DimensionError("global_average_pool: input must be 4-D");
  const int batch = x.dim(0), ch = x.dim(1);
  const long long plane = static_cast<long long>(x.dim(2)) * x.dim(3);
  Tensor<T> out = Tensor<T>::zeros({batch, ch});
  for (long long nc = 0; nc < static_cast<long long>(batch) * ch; ++nc) {
    T acc = T(0);
    for (long long i = 0; i < plane; ++i) acc += x.data()[nc * plane + i];
    out.data()[nc] = acc / static_cast<T>(plane);
  }
  if (x.impl()->needs_grad()) {
    auto xi = x.impl();
    out.impl()->parents = {xi};
    out.impl()->backprop = [xi, batch, ch, plane](typename Tensor<T>::Impl& self) {
      auto& g = xi->ensure_grad();
      for (long long nc = 0; nc < static_cast<long long>(batch) * ch; ++nc) {
        const T gv = self.grad[nc] / static_cast<T>(plane);
        for (long long i = 0; i < plane; ++i) g[nc * plane + i] += gv;
      }
    };
  }
  return out;
}

// N x C x H x W -> N x (C*H*W).
template <typename T>
Tensor<T> flatten(const Tensor<T>& x) {
  if (x.ndim() < 2) throw DimensionError("flatten: input must be at least 2-D");
  const int batch = x.dim(0);
  const long long feat = x.size() / batch;
  Tensor<T> out = Tensor<T>::from_data({batch, static_cast<int>(feat)}, x.data());
  if (x.impl()->needs_grad()) {
    auto xi = x.impl();
    out.impl()->parents = {xi};
    out.impl()->backprop = [xi](typename Tensor<T>::Impl& self) {
      auto& g = xi->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    };
  }
  return out;
}

// Affine map: x (N x F) with weight (O x F), bias (O) -> N x O.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias) {
  if (x.ndim() != 2) throw DimensionError("linear: input must be 2-D");
  if (weight.ndim() != 2 || bias.ndim() != 1 || bias.dim(0) != weight.dim(0))
    throw DimensionError("linear: weight must be O x F with bias length O");
  if (x.dim(1) != weight.dim(1))
    throw DimensionError("linear: feature axis " + std::to_string(x.dim(1)) +
                         " does not match weight features " +
                         std::to_string(weight.dim(1)));
  const int batch = x.dim(0), feat = x.dim(1), out_n = weight.dim(0);
  Tensor<T> out = Tensor<T>::zeros({batch, out_n});
  for (int n = 0; n < batch; ++n)
    for (int o = 0; o < out_n; ++o) {
      T acc = bias.data()[o];
      const T* xr = x.data().data() + static_cast<long long>(n) * feat;
      const T* wr = weight.data().data() + static_cast<long long>(o) * feat;
      for (int f = 0; f < feat; ++f) acc += wr[f] * xr[f];
      out.data()[static_cast<long long>(n) * out_n + o] = acc;
    }
  if (detail::any_needs_grad<T>({&x, &weight, &bias})) {
    auto xi = x.impl(), wi = weight.impl(), bi = bias.impl();
    out.impl()->parents = {xi, wi, bi};
    out.impl()->backprop = [xi, wi, bi, batch, feat, out_n](typename Tensor<T>::Impl& self) {
      T* gx = xi->needs_grad() ? xi->ensure_grad().data() : nullptr;
      T* gw = wi->needs_grad() ? wi->ensure_grad().data() : nullptr;
      T* gb = bi->needs_grad() ? bi->ensure_grad().data() : nullptr;
      for (int n = 0; n < batch; ++n)
        for (int o = 0; o < out_n; ++o) {
          const T gv = self.grad[static_cast<long long>(n) * out_n + o];
          if (gv == T(0)) continue;
          if (gb) gb[o] += gv;
          const T* xr = xi->data.data() + static_cast<long long>(n) * feat;
          const T* wr = wi->data.data() + static_cast<long long>(o) * feat;
          for (int f = 0; f < feat; ++f) {
            if (gx) gx[static_cast<long long>(n) * feat + f] += wr[f] * gv;
            if (gw) gw[static_cast<long long>(o) * feat + f] += xr[f] * gv;
          }
        }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

// Mean over the batch of -log softmax(logits)[label], stabilized by
// max-subtraction. Gradient is (softmax - onehot) / batch.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits,
                                const std::vector<int>& labels) {
  if (logits.ndim() != 2)
    throw DimensionError("softmax_cross_entropy: logits must be 2-D");
  const int batch = logits.dim(0), classes = logits.dim(1);
  if (static_cast<int>(labels.size()) != batch)
    throw InputError("softmax_cross_entropy: label count does not match batch");
  for (int lbl : labels)
    if (lbl < 0 || lbl >= classes)
      throw InputError("softmax_cross_entropy: label " + std::to_string(lbl) +
                       " out of range [0, " + std::to_string(classes) + ")");
  std::vector<T> probs(static_cast<size_t>(logits.size()));
  T loss = T(0);
  for (int n = 0; n < batch; ++n) {
    const T* row = logits.data().data() + static_cast<long long>(n) * classes;
    T mx = row[0];
    for (int c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
    T z = T(0);
    for (int c = 0; c < classes; ++c) {
      probs[static_cast<long long>(n) * classes + c] = std::exp(row[c] - mx);
      z += probs[static_cast<long long>(n) * classes + c];
    }
    for (int c = 0; c < classes; ++c)
      probs[static_cast<long long>(n) * classes + c] /= z;
    loss -= std::log(probs[static_cast<long long>(n) * classes + labels[n]]);
  }
  Tensor<T> out = Tensor<T>::from_data({1}, {loss / static_cast<T>(batch)});
  if (logits.impl()->needs_grad()) {
    auto li = logits.impl();
    out.impl()->parents = {li};
    out.impl()->backprop = [li, labels, batch, classes,
                            probs = std::move(probs)](typename Tensor<T>::Impl& self) {
      auto& g = li->ensure_grad();
      const T gv = self.grad[0] / static_cast<T>(batch);
      for (int n = 0; n < batch; ++n)
        for (int c = 0; c < classes; ++c)
          g[static_cast<long long>(n) * classes + c] +=
              gv * (probs[static_cast<long long>(n) * classes + c] -
                    (c == labels[n] ? T(1) : T(0)));
    };
  }
  return out;
}

// Row-wise softmax probabilities (no graph; used for scoring).
template <typename T>
std::vector<T> softmax_rows(const Tensor<T>& logits) {
  if (logits.ndim() != 2) throw DimensionError("softmax_rows: logits must be 2-D");
  const int batch = logits.dim(0), classes = logits.dim(1);
  std::vector<T> probs(static_cast<size_t>(logits.size()));
  for (int n = 0; n < batch; ++n) {
    const T* row = logits.data().data() + static_cast<long long>(n) * classes;
    T mx = row[0];
    for (int c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
    T z = T(0);
    for (int c = 0; c < classes; ++c) {
      probs[static_cast<long long>(n) * classes + c] = std::exp(row[c] - mx);
      z += probs[static_cast<long long>(n) * classes + c];
    }
    for (int c = 0; c < classes; ++c)
      probs[static_cast<long long>(n) * classes + c] /= z;
  }
  return probs;
}

}  // namespace milseg
