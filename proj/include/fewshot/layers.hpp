#pragma once

// Forward and backward implementations of the primitive layers. Convolutions
// go through an im2col buffer and an Eigen matrix product; everything else is
// straightforward loops.

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <vector>

#include "fewshot/tensor.hpp"

namespace fewshot {

template <class T>
struct ConvParams {
  Tensor4<T> weights;   // (out_c, in_c, kh, kw)
  std::vector<T> bias;  // length out_c

  int out_c() const { return weights.n; }
  int in_c() const { return weights.c; }
  int kernel() const { return weights.h; }

  void validate() const {
    if (weights.h != weights.w)
      throw ShapeError("ConvParams: kernel must be square, got " +
                       weights.shape_str());
    if (int(bias.size()) != weights.n)
      throw ShapeError("ConvParams: bias length " +
                       std::to_string(bias.size()) + " != out_c " +
                       std::to_string(weights.n));
  }
};

template <class T>
struct PReluParams {
  std::vector<T> alpha;  // one slope per channel
};

template <class T>
struct BatchNormParams {
  std::vector<T> gamma, beta;
  std::vector<T> running_mean, running_var;
  T eps = T(1e-5);
  T momentum = T(0.1);
};

enum class BnMode { train, infer };

struct PoolIndices {
  int n = 0, c = 0, h = 0, w = 0;     // shape of the pooled output
  std::vector<std::uint8_t> argmax;   // winner offset in {0,1,2,3} per entry
};

namespace detail {

template <class T>
using MatRM =
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// col(kc*kh*kw + ky*kw + kx, y*w + x) = padded x(kc, y+ky-pad, x+kx-pad)
template <class T>
void im2col(const Tensor4<T>& x, int sample, int k, int pad,
            MatRM<T>& col) {
  const int hw = x.h * x.w;
  col.resize(x.c * k * k, hw);
  for (int kc = 0; kc < x.c; ++kc) {
    const T* plane = x.data.data() + (std::size_t(sample) * x.c + kc) * hw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col.data() + std::size_t((kc * k + ky) * k + kx) * hw;
        for (int y = 0; y < x.h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= x.h) {
            for (int xx = 0; xx < x.w; ++xx) row[y * x.w + xx] = T(0);
            continue;
          }
          for (int xx = 0; xx < x.w; ++xx) {
            const int sx = xx + kx - pad;
            row[y * x.w + xx] =
                (sx < 0 || sx >= x.w) ? T(0) : plane[sy * x.w + sx];
          }
        }
      }
    }
  }
}

// Scatter-add transpose of im2col.
template <class T>
void col2im_add(const MatRM<T>& col, int sample, int k, int pad,
                Tensor4<T>& gx) {
  const int hw = gx.h * gx.w;
  for (int kc = 0; kc < gx.c; ++kc) {
    T* plane = gx.data.data() + (std::size_t(sample) * gx.c + kc) * hw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col.data() + std::size_t((kc * k + ky) * k + kx) * hw;
        for (int y = 0; y < gx.h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= gx.h) continue;
          for (int xx = 0; xx < gx.w; ++xx) {
            const int sx = xx + kx - pad;
            if (sx < 0 || sx >= gx.w) continue;
            plane[sy * gx.w + sx] += row[y * gx.w + xx];
          }
        }
      }
    }
  }
}

}  // namespace detail

// Cross-correlation with stride 1 and zero padding; pad = (k-1)/2 keeps the
// spatial size.
template <class T>
Tensor4<T> conv2d_forward(const Tensor4<T>& x, const ConvParams<T>& p,
                          int pad) {
  p.validate();
  if (x.c != p.in_c())
    throw ShapeError("conv2d_forward: input channels " + std::to_string(x.c) +
                     " != kernel in_c " + std::to_string(p.in_c()));
  const int k = p.kernel();
  const int hw = x.h * x.w;
  Tensor4<T> y(x.n, p.out_c(), x.h, x.w);
  detail::MatRM<T> col;
  Eigen::Map<const detail::MatRM<T>> wmat(p.weights.data.data(), p.out_c(),
                                          x.c * k * k);
  for (int i = 0; i < x.n; ++i) {
    detail::im2col(x, i, k, pad, col);
    Eigen::Map<detail::MatRM<T>> ymat(
        y.data.data() + std::size_t(i) * p.out_c() * hw, p.out_c(), hw);
    ymat.noalias() = wmat * col;
    for (int oc = 0; oc < p.out_c(); ++oc)
      ymat.row(oc).array() += p.bias[oc];
  }
  return y;
}

template <class T>
struct ConvGrads {
  Tensor4<T> x;        // grad wrt input
  Tensor4<T> w;        // grad wrt weights
  std::vector<T> b;    // grad wrt bias
};

template <class T>
ConvGrads<T> conv2d_backward(const Tensor4<T>& x, const ConvParams<T>& p,
                             const Tensor4<T>& grad_out, int pad) {
  p.validate();
  const int k = p.kernel();
  if (grad_out.n != x.n || grad_out.c != p.out_c() || grad_out.h != x.h ||
      grad_out.w != x.w)
    throw ShapeError("conv2d_backward: grad_out shape " +
                     grad_out.shape_str() + " does not match forward output");
  const int hw = x.h * x.w;
  ConvGrads<T> g{zeros_like(x), zeros_like(p.weights),
                 std::vector<T>(p.out_c(), T(0))};
  detail::MatRM<T> col, gcol;
  Eigen::Map<const detail::MatRM<T>> wmat(p.weights.data.data(), p.out_c(),
                                          x.c * k * k);
  Eigen::Map<detail::MatRM<T>> gwmat(g.w.data.data(), p.out_c(), x.c * k * k);
  for (int i = 0; i < x.n; ++i) {
    detail::im2col(x, i, k, pad, col);
    Eigen::Map<const detail::MatRM<T>> gymat(
        grad_out.data.data() + std::size_t(i) * p.out_c() * hw, p.out_c(), hw);
    gwmat.noalias() += gymat * col.transpose();
    // scalar loop: Eigen's redux peels by runtime pointer alignment, which
    // would make the rounding (and checkpoints) vary between allocations
    for (int oc = 0; oc < p.out_c(); ++oc) {
      const T* row = grad_out.data.data() + (std::size_t(i) * p.out_c() + oc) * hw;
      T s = T(0);
      for (int q = 0; q < hw; ++q) s += row[q];
      g.b[oc] += s;
    }
    gcol.resize(x.c * k * k, hw);
    gcol.noalias() = wmat.transpose() * gymat;
    detail::col2im_add(gcol, i, k, pad, g.x);
  }
  return g;
}

template <class T>
Tensor4<T> prelu_forward(const Tensor4<T>& x, const PReluParams<T>& p) {
  if (int(p.alpha.size()) != x.c)
    throw ShapeError("prelu_forward: alpha length " +
                     std::to_string(p.alpha.size()) + " != channels " +
                     std::to_string(x.c));
  Tensor4<T> y = x;
  const int hw = x.h * x.w;
  for (int i = 0; i < x.n; ++i)
    for (int j = 0; j < x.c; ++j) {
      T* plane = y.data.data() + (std::size_t(i) * x.c + j) * hw;
      const T a = p.alpha[j];
      for (int q = 0; q < hw; ++q)
        if (plane[q] < T(0)) plane[q] *= a;
    }
  return y;
}

template <class T>
struct PReluGrads {
  Tensor4<T> x;
  std::vector<T> alpha;
};

template <class T>
PReluGrads<T> prelu_backward(const Tensor4<T>& x, const PReluParams<T>& p,
                             const Tensor4<T>& grad_out) {
  if (int(p.alpha.size()) != x.c)
    throw ShapeError("prelu_backward: alpha length mismatch");
  require_same_shape(x, grad_out, "prelu_backward");
  PReluGrads<T> g{zeros_like(x), std::vector<T>(x.c, T(0))};
  const int hw = x.h * x.w;
  for (int i = 0; i < x.n; ++i)
    for (int j = 0; j < x.c; ++j) {
      const std::size_t base = (std::size_t(i) * x.c + j) * hw;
      const T a = p.alpha[j];
      for (int q = 0; q < hw; ++q) {
        const T xv = x.data[base + q];
        const T gy = grad_out.data[base + q];
        if (xv >= T(0)) {
          g.x.data[base + q] = gy;
        } else {
          g.x.data[base + q] = a * gy;
          g.alpha[j] += xv * gy;
        }
      }
    }
  return g;
}

template <class T>
struct BnCache {
  std::vector<T> mean, var;  // statistics actually used in the forward
  Tensor4<T> x_hat;
  BnMode mode = BnMode::train;
};

template <class T>
struct BnResult {
  Tensor4<T> y;
  BnCache<T> cache;
};

template <class T>
BnResult<T> batchnorm_forward(const Tensor4<T>& x, const BatchNormParams<T>& p,
                              BnMode mode) {
  if (int(p.gamma.size()) != x.c || int(p.beta.size()) != x.c)
    throw ShapeError("batchnorm_forward: gamma/beta length != channels " +
                     std::to_string(x.c));
  const int hw = x.h * x.w;
  const T m = T(x.n) * T(hw);
  BnResult<T> r;
  r.cache.mode = mode;
  r.cache.mean.assign(x.c, T(0));
  r.cache.var.assign(x.c, T(0));
  if (mode == BnMode::train) {
    for (int j = 0; j < x.c; ++j) {
      T s = T(0);
      for (int i = 0; i < x.n; ++i) {
        const T* plane = x.data.data() + (std::size_t(i) * x.c + j) * hw;
        for (int q = 0; q < hw; ++q) s += plane[q];
      }
      const T mu = s / m;
      T v = T(0);
      for (int i = 0; i < x.n; ++i) {
        const T* plane = x.data.data() + (std::size_t(i) * x.c + j) * hw;
        for (int q = 0; q < hw; ++q) {
          const T d = plane[q] - mu;
          v += d * d;
        }
      }
      r.cache.mean[j] = mu;
      r.cache.var[j] = v / m;
    }
  } else {
    r.cache.mean = p.running_mean;
    r.cache.var = p.running_var;
  }
  r.cache.x_hat = Tensor4<T>(x.n, x.c, x.h, x.w);
  r.y = Tensor4<T>(x.n, x.c, x.h, x.w);
  for (int j = 0; j < x.c; ++j) {
    const T inv_std = T(1) / std::sqrt(r.cache.var[j] + p.eps);
    const T mu = r.cache.mean[j];
    for (int i = 0; i < x.n; ++i) {
      const std::size_t base = (std::size_t(i) * x.c + j) * hw;
      for (int q = 0; q < hw; ++q) {
        const T xh = (x.data[base + q] - mu) * inv_std;
        r.cache.x_hat.data[base + q] = xh;
        r.y.data[base + q] = p.gamma[j] * xh + p.beta[j];
      }
    }
  }
  return r;
}

// Blend the statistics of a train-mode forward into the running estimates.
// Kept separate from the forward so gradcheck and inference stay pure.
template <class T>
void batchnorm_update_running(BatchNormParams<T>& p, const BnCache<T>& cache) {
  for (std::size_t j = 0; j < p.running_mean.size(); ++j) {
    p.running_mean[j] =
        (T(1) - p.momentum) * p.running_mean[j] + p.momentum * cache.mean[j];
    p.running_var[j] =
        (T(1) - p.momentum) * p.running_var[j] + p.momentum * cache.var[j];
  }
}

template <class T>
struct BnGrads {
  Tensor4<T> x;
  std::vector<T> gamma, beta;
};

template <class T>
BnGrads<T> batchnorm_backward(const BnCache<T>& cache,
                              const BatchNormParams<T>& p,
                              const Tensor4<T>& grad_out) {
  const Tensor4<T>& xh = cache.x_hat;
  require_same_shape(xh, grad_out, "batchnorm_backward");
  const int hw = xh.h * xh.w;
  const T m = T(xh.n) * T(hw);
  BnGrads<T> g{zeros_like(xh), std::vector<T>(xh.c, T(0)),
               std::vector<T>(xh.c, T(0))};
  for (int j = 0; j < xh.c; ++j) {
    const T inv_std = T(1) / std::sqrt(cache.var[j] + p.eps);
    T sum_gy = T(0), sum_gy_xh = T(0);
    for (int i = 0; i < xh.n; ++i) {
      const std::size_t base = (std::size_t(i) * xh.c + j) * hw;
      for (int q = 0; q < hw; ++q) {
        sum_gy += grad_out.data[base + q];
        sum_gy_xh += grad_out.data[base + q] * xh.data[base + q];
      }
    }
    g.gamma[j] = sum_gy_xh;
    g.beta[j] = sum_gy;
    for (int i = 0; i < xh.n; ++i) {
      const std::size_t base = (std::size_t(i) * xh.c + j) * hw;
      for (int q = 0; q < hw; ++q) {
        const T gy = grad_out.data[base + q];
        if (cache.mode == BnMode::train) {
          g.x.data[base + q] =
              p.gamma[j] * inv_std *
              (gy - sum_gy / m - xh.data[base + q] * sum_gy_xh / m);
        } else {
          g.x.data[base + q] = p.gamma[j] * inv_std * gy;
        }
      }
    }
  }
  return g;
}

template <class T>
struct PoolResult {
  Tensor4<T> y;
  PoolIndices idx;
};

// 2x2 max pool, stride 2. Ties go to the lowest window offset.
template <class T>
PoolResult<T> maxpool2x2(const Tensor4<T>& x) {
  if (x.h % 2 != 0 || x.w % 2 != 0)
    throw ShapeError("maxpool2x2: spatial dims must be even, got " +
                     x.shape_str() + "; pad to even at the data layer");
  const int oh = x.h / 2, ow = x.w / 2;
  PoolResult<T> r{Tensor4<T>(x.n, x.c, oh, ow),
                  PoolIndices{x.n, x.c, oh, ow,
                              std::vector<std::uint8_t>(
                                  std::size_t(x.n) * x.c * oh * ow, 0)}};
  for (int i = 0; i < x.n; ++i)
    for (int j = 0; j < x.c; ++j)
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) {
          T best = x.at(i, j, 2 * y, 2 * xx);
          int best_off = 0;
          for (int off = 1; off < 4; ++off) {
            const T v = x.at(i, j, 2 * y + off / 2, 2 * xx + off % 2);
            if (v > best) {
              best = v;
              best_off = off;
            }
          }
          r.y.at(i, j, y, xx) = best;
          r.idx.argmax[((std::size_t(i) * x.c + j) * oh + y) * ow + xx] =
              std::uint8_t(best_off);
        }
  return r;
}

inline void check_pool_idx(const PoolIndices& idx, int n, int c, int h, int w,
                           const char* who) {
  if (idx.n != n || idx.c != c || idx.h != h || idx.w != w)
    throw ShapeError(std::string(who) + ": pool indices shape (" +
                     std::to_string(idx.n) + "," + std::to_string(idx.c) +
                     "," + std::to_string(idx.h) + "," + std::to_string(idx.w) +
                     ") does not match input");
}

// Routes the pooled-output gradient back to each window's argmax.
template <class T>
Tensor4<T> maxpool2x2_backward(const PoolIndices& idx,
                               const Tensor4<T>& grad_y) {
  check_pool_idx(idx, grad_y.n, grad_y.c, grad_y.h, grad_y.w,
                 "maxpool2x2_backward");
  Tensor4<T> gx(grad_y.n, grad_y.c, grad_y.h * 2, grad_y.w * 2);
  for (int i = 0; i < grad_y.n; ++i)
    for (int j = 0; j < grad_y.c; ++j)
      for (int y = 0; y < grad_y.h; ++y)
        for (int xx = 0; xx < grad_y.w; ++xx) {
          const int off =
              idx.argmax[((std::size_t(i) * grad_y.c + j) * grad_y.h + y) *
                             grad_y.w +
                         xx];
          gx.at(i, j, 2 * y + off / 2, 2 * xx + off % 2) =
              grad_y.at(i, j, y, xx);
        }
  return gx;
}

// Places each pooled value at its recorded offset, zeros elsewhere.
template <class T>
Tensor4<T> unpool2x2(const Tensor4<T>& y, const PoolIndices& idx) {
  check_pool_idx(idx, y.n, y.c, y.h, y.w, "unpool2x2");
  Tensor4<T> out(y.n, y.c, y.h * 2, y.w * 2);
  for (int i = 0; i < y.n; ++i)
    for (int j = 0; j < y.c; ++j)
      for (int yy = 0; yy < y.h; ++yy)
        for (int xx = 0; xx < y.w; ++xx) {
          const int off =
              idx.argmax[((std::size_t(i) * y.c + j) * y.h + yy) * y.w + xx];
          out.at(i, j, 2 * yy + off / 2, 2 * xx + off % 2) =
              y.at(i, j, yy, xx);
        }
  return out;
}

template <class T>
Tensor4<T> unpool2x2_backward(const PoolIndices& idx,
                              const Tensor4<T>& grad_out) {
  if (grad_out.h != idx.h * 2 || grad_out.w != idx.w * 2 ||
      grad_out.n != idx.n || grad_out.c != idx.c)
    throw ShapeError("unpool2x2_backward: grad shape " + grad_out.shape_str() +
                     " does not match unpooled output");
  Tensor4<T> gy(idx.n, idx.c, idx.h, idx.w);
  for (int i = 0; i < idx.n; ++i)
    for (int j = 0; j < idx.c; ++j)
      for (int yy = 0; yy < idx.h; ++yy)
        for (int xx = 0; xx < idx.w; ++xx) {
          const int off =
              idx.argmax[((std::size_t(i) * idx.c + j) * idx.h + yy) * idx.w +
                         xx];
          gy.at(i, j, yy, xx) =
              grad_out.at(i, j, 2 * yy + off / 2, 2 * xx + off % 2);
        }
  return gy;
}

template <class T>
T sigmoid_scalar(T v) {
  if (v >= T(0)) {
    const T e = std::exp(-v);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(v);
  return e / (T(1) + e);
}

template <class T>
Tensor4<T> sigmoid(const Tensor4<T>& x) {
  Tensor4<T> y = x;
  for (auto& v : y.data) v = sigmoid_scalar(v);
  return y;
}

template <class T>
Tensor4<T> sigmoid_backward(const Tensor4<T>& y, const Tensor4<T>& grad_out) {
  require_same_shape(y, grad_out, "sigmoid_backward");
  Tensor4<T> gx = grad_out;
  for (std::size_t i = 0; i < gx.data.size(); ++i)
    gx.data[i] *= y.data[i] * (T(1) - y.data[i]);
  return gx;
}

// Per-pixel softmax across channels, stabilized by max subtraction.
template <class T>
Tensor4<T> softmax_over_channels(const Tensor4<T>& x) {
  if (x.c < 2)
    throw ShapeError("softmax_over_channels: needs >= 2 channels, got " +
                     std::to_string(x.c));
  Tensor4<T> y(x.n, x.c, x.h, x.w);
  const int hw = x.h * x.w;
  for (int i = 0; i < x.n; ++i)
    for (int q = 0; q < hw; ++q) {
      T mx = x.data[(std::size_t(i) * x.c) * hw + q];
      for (int j = 1; j < x.c; ++j)
        mx = std::max(mx, x.data[(std::size_t(i) * x.c + j) * hw + q]);
      T sum = T(0);
      for (int j = 0; j < x.c; ++j) {
        const T e = std::exp(x.data[(std::size_t(i) * x.c + j) * hw + q] - mx);
        y.data[(std::size_t(i) * x.c + j) * hw + q] = e;
        sum += e;
      }
      for (int j = 0; j < x.c; ++j)
        y.data[(std::size_t(i) * x.c + j) * hw + q] /= sum;
    }
  return y;
}

// grad_x_k = s_k (g_k - sum_j g_j s_j), per pixel.
template <class T>
Tensor4<T> softmax_backward(const Tensor4<T>& y, const Tensor4<T>& grad_out) {
  require_same_shape(y, grad_out, "softmax_backward");
  Tensor4<T> gx(y.n, y.c, y.h, y.w);
  const int hw = y.h * y.w;
  for (int i = 0; i < y.n; ++i)
    for (int q = 0; q < hw; ++q) {
      T dot = T(0);
      for (int j = 0; j < y.c; ++j)
        dot += grad_out.data[(std::size_t(i) * y.c + j) * hw + q] *
               y.data[(std::size_t(i) * y.c + j) * hw + q];
      for (int j = 0; j < y.c; ++j) {
        const std::size_t o = (std::size_t(i) * y.c + j) * hw + q;
        gx.data[o] = y.data[o] * (grad_out.data[o] - dot);
      }
    }
  return gx;
}

}  // namespace fewshot
