#pragma once

// Squeeze-and-excitation interaction blocks. The sSE variant squeezes the
// conditioner map across channels into a spatial sigmoid gate; the cSE
// variant squeezes it spatially (global average pool) into a per-channel
// gate. Both gates multiply the segmenter map.

#include <vector>

#include "fewshot/layers.hpp"
#include "fewshot/tensor.hpp"

namespace fewshot {

template <class T>
struct SseParams {
  std::vector<T> w_sq;  // one 1x1xC' kernel
  T bias = T(0);
};

template <class T>
struct CseParams {
  std::vector<T> w_map;  // C x C', row-major
  std::vector<T> bias;   // length C
  int out_c = 0;         // C  (segmenter channels)
  int in_c = 0;          // C' (conditioner channels)
};

template <class T>
struct SseCache {
  Tensor4<T> gate;  // (n,1,h,w), sigmoid of the squeeze projection
};

template <class T>
void sse_check(const Tensor4<T>& u_con, const Tensor4<T>& u_seg,
               const SseParams<T>& p) {
  if (u_con.n != u_seg.n || u_con.h != u_seg.h || u_con.w != u_seg.w)
    throw ShapeError("sse_apply: spatial mismatch " + u_con.shape_str() +
                     " vs " + u_seg.shape_str());
  if (int(p.w_sq.size()) != u_con.c)
    throw ShapeError("sse_apply: w_sq length " + std::to_string(p.w_sq.size()) +
                     " != conditioner channels " + std::to_string(u_con.c));
}

template <class T>
SseCache<T> sse_forward(const Tensor4<T>& u_con, const Tensor4<T>& u_seg,
                        const SseParams<T>& p, Tensor4<T>& out) {
  sse_check(u_con, u_seg, p);
  const int hw = u_con.h * u_con.w;
  SseCache<T> cache{Tensor4<T>(u_con.n, 1, u_con.h, u_con.w)};
  out = Tensor4<T>(u_seg.n, u_seg.c, u_seg.h, u_seg.w);
  for (int i = 0; i < u_con.n; ++i) {
    for (int q = 0; q < hw; ++q) {
      T proj = p.bias;
      for (int j = 0; j < u_con.c; ++j)
        proj += p.w_sq[j] * u_con.data[(std::size_t(i) * u_con.c + j) * hw + q];
      cache.gate.data[std::size_t(i) * hw + q] = sigmoid_scalar(proj);
    }
    for (int j = 0; j < u_seg.c; ++j) {
      const std::size_t base = (std::size_t(i) * u_seg.c + j) * hw;
      for (int q = 0; q < hw; ++q)
        out.data[base + q] =
            cache.gate.data[std::size_t(i) * hw + q] * u_seg.data[base + q];
    }
  }
  return cache;
}

template <class T>
Tensor4<T> sse_apply(const Tensor4<T>& u_con, const Tensor4<T>& u_seg,
                     const SseParams<T>& p) {
  Tensor4<T> out;
  sse_forward(u_con, u_seg, p, out);
  return out;
}

template <class T>
struct SseGrads {
  Tensor4<T> u_con, u_seg;
  std::vector<T> w_sq;
  T bias = T(0);
};

template <class T>
SseGrads<T> sse_backward(const Tensor4<T>& u_con, const Tensor4<T>& u_seg,
                         const SseParams<T>& p, const SseCache<T>& cache,
                         const Tensor4<T>& grad_out) {
  require_same_shape(u_seg, grad_out, "sse_backward");
  const int hw = u_con.h * u_con.w;
  SseGrads<T> g{zeros_like(u_con), zeros_like(u_seg),
                std::vector<T>(u_con.c, T(0)), T(0)};
  for (int i = 0; i < u_con.n; ++i) {
    for (int q = 0; q < hw; ++q) {
      const T gate = cache.gate.data[std::size_t(i) * hw + q];
      T grad_gate = T(0);
      for (int j = 0; j < u_seg.c; ++j) {
        const std::size_t o = (std::size_t(i) * u_seg.c + j) * hw + q;
        grad_gate += grad_out.data[o] * u_seg.data[o];
        g.u_seg.data[o] = gate * grad_out.data[o];
      }
      const T grad_proj = grad_gate * gate * (T(1) - gate);
      g.bias += grad_proj;
      for (int j = 0; j < u_con.c; ++j) {
        const std::size_t o = (std::size_t(i) * u_con.c + j) * hw + q;
        g.w_sq[j] += grad_proj * u_con.data[o];
        g.u_con.data[o] = grad_proj * p.w_sq[j];
      }
    }
  }
  return g;
}

template <class T>
struct CseCache {
  std::vector<T> pooled;  // n x C', global averages of u_con
  std::vector<T> gate;    // n x C
};

template <class T>
void cse_check(const Tensor4<T>& u_con, const Tensor4<T>& u_seg,
               const CseParams<T>& p) {
  if (u_con.n != u_seg.n || u_con.h != u_seg.h || u_con.w != u_seg.w)
    throw ShapeError("cse_apply: spatial mismatch " + u_con.shape_str() +
                     " vs " + u_seg.shape_str());
  if (p.in_c != u_con.c || p.out_c != u_seg.c ||
      int(p.w_map.size()) != p.out_c * p.in_c ||
      int(p.bias.size()) != p.out_c)
    throw ShapeError("cse_apply: parameter dims (C=" + std::to_string(p.out_c) +
                     ", C'=" + std::to_string(p.in_c) +
                     ") do not match feature maps " + u_seg.shape_str() +
                     " / " + u_con.shape_str());
}

template <class T>
CseCache<T> cse_forward(const Tensor4<T>& u_con, const Tensor4<T>& u_seg,
                        const CseParams<T>& p, Tensor4<T>& out) {
  cse_check(u_con, u_seg, p);
  const int hw = u_con.h * u_con.w;
  CseCache<T> cache;
  cache.pooled.assign(std::size_t(u_con.n) * p.in_c, T(0));
  cache.gate.assign(std::size_t(u_con.n) * p.out_c, T(0));
  out = Tensor4<T>(u_seg.n, u_seg.c, u_seg.h, u_seg.w);
  for (int i = 0; i < u_con.n; ++i) {
    for (int j = 0; j < p.in_c; ++j) {
      T s = T(0);
      const std::size_t base = (std::size_t(i) * u_con.c + j) * hw;
      for (int q = 0; q < hw; ++q) s += u_con.data[base + q];
      cache.pooled[std::size_t(i) * p.in_c + j] = s / T(hw);
    }
    for (int j = 0; j < p.out_c; ++j) {
      T z = p.bias[j];
      for (int jc = 0; jc < p.in_c; ++jc)
        z += p.w_map[std::size_t(j) * p.in_c + jc] *
             cache.pooled[std::size_t(i) * p.in_c + jc];
      const T gate = sigmoid_scalar(z);
      cache.gate[std::size_t(i) * p.out_c + j] = gate;
      const std::size_t base = (std::size_t(i) * u_seg.c + j) * hw;
      for (int q = 0; q < hw; ++q) out.data[base + q] = gate * u_seg.data[base + q];
    }
  }
  return cache;
}

template <class T>
Tensor4<T> cse_apply(const Tensor4<T>& u_con, const Tensor4<T>& u_seg,
                     const CseParams<T>& p) {
  Tensor4<T> out;
  cse_forward(u_con, u_seg, p, out);
  return out;
}

template <class T>
struct CseGrads {
  Tensor4<T> u_con, u_seg;
  std::vector<T> w_map, bias;
};

template <class T>
CseGrads<T> cse_backward(const Tensor4<T>& u_con, const Tensor4<T>& u_seg,
                         const CseParams<T>& p, const CseCache<T>& cache,
                         const Tensor4<T>& grad_out) {
  require_same_shape(u_seg, grad_out, "cse_backward");
  const int hw = u_con.h * u_con.w;
  CseGrads<T> g{zeros_like(u_con), zeros_like(u_seg),
                std::vector<T>(p.w_map.size(), T(0)),
                std::vector<T>(p.bias.size(), T(0))};
  std::vector<T> grad_pooled(p.in_c);
  for (int i = 0; i < u_con.n; ++i) {
    std::fill(grad_pooled.begin(), grad_pooled.end(), T(0));
    for (int j = 0; j < p.out_c; ++j) {
      const T gate = cache.gate[std::size_t(i) * p.out_c + j];
      const std::size_t base = (std::size_t(i) * u_seg.c + j) * hw;
      T grad_gate = T(0);
      for (int q = 0; q < hw; ++q) {
        grad_gate += grad_out.data[base + q] * u_seg.data[base + q];
        g.u_seg.data[base + q] = gate * grad_out.data[base + q];
      }
      const T grad_z = grad_gate * gate * (T(1) - gate);
      g.bias[j] += grad_z;
      for (int jc = 0; jc < p.in_c; ++jc) {
        g.w_map[std::size_t(j) * p.in_c + jc] +=
            grad_z * cache.pooled[std::size_t(i) * p.in_c + jc];
        grad_pooled[jc] += grad_z * p.w_map[std::size_t(j) * p.in_c + jc];
      }
    }
    for (int jc = 0; jc < p.in_c; ++jc) {
      const std::size_t base = (std::size_t(i) * u_con.c + jc) * hw;
      const T per_voxel = grad_pooled[jc] / T(hw);
      for (int q = 0; q < hw; ++q) g.u_con.data[base + q] = per_voxel;
    }
  }
  return g;
}

}  // namespace fewshot
