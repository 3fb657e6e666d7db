#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace fewshot {

// Thrown when tensor shapes do not line up; the message names the offending
// dimension.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dense rank-4 array, layout [n][c][h][w] row-major with w fastest.
template <class T>
struct Tensor4 {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> data;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_, T fill = T(0))
      : n(n_), c(c_), h(h_), w(w_) {
    if (n < 1 || c < 1 || h < 1 || w < 1)
      throw ShapeError("Tensor4: all shape entries must be >= 1, got (" +
                       std::to_string(n) + "," + std::to_string(c) + "," +
                       std::to_string(h) + "," + std::to_string(w) + ")");
    data.assign(size(), fill);
  }

  std::size_t size() const {
    return std::size_t(n) * c * h * w;
  }

  T& at(int i, int j, int y, int x) {
    return data[((std::size_t(i) * c + j) * h + y) * w + x];
  }
  T at(int i, int j, int y, int x) const {
    return data[((std::size_t(i) * c + j) * h + y) * w + x];
  }

  bool same_shape(const Tensor4& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }

  std::string shape_str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

template <class T>
Tensor4<T> zeros_like(const Tensor4<T>& t) {
  return Tensor4<T>(t.n, t.c, t.h, t.w, T(0));
}

template <class U, class T>
Tensor4<U> cast_tensor(const Tensor4<T>& t) {
  Tensor4<U> out(t.n, t.c, t.h, t.w);
  for (std::size_t i = 0; i < t.data.size(); ++i) out.data[i] = U(t.data[i]);
  return out;
}

template <class T>
void require_same_shape(const Tensor4<T>& a, const Tensor4<T>& b,
                        const char* who) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(who) + ": shape mismatch " + a.shape_str() +
                     " vs " + b.shape_str());
}

}  // namespace fewshot
