#pragma once

// Soft Dice loss over the foreground probability map, with the smoothing
// term that defines the empty/empty case.

#include "fewshot/tensor.hpp"

namespace fewshot {

template <class T>
T dice_loss(const Tensor4<T>& prediction, const Tensor4<T>& target,
            T eps = T(1e-5)) {
  require_same_shape(prediction, target, "dice_loss");
  T inter = T(0), sum_p = T(0), sum_t = T(0);
  for (std::size_t i = 0; i < prediction.data.size(); ++i) {
    inter += prediction.data[i] * target.data[i];
    sum_p += prediction.data[i];
    sum_t += target.data[i];
  }
  return T(1) - (T(2) * inter + eps) / (sum_p + sum_t + eps);
}

// d(loss)/d(prediction): -(2 t_i den - num) / den^2 with
// num = 2*sum(p t) + eps, den = sum p + sum t + eps.
template <class T>
Tensor4<T> dice_loss_grad(const Tensor4<T>& prediction,
                          const Tensor4<T>& target, T eps = T(1e-5)) {
  require_same_shape(prediction, target, "dice_loss_grad");
  T inter = T(0), sum_p = T(0), sum_t = T(0);
  for (std::size_t i = 0; i < prediction.data.size(); ++i) {
    inter += prediction.data[i] * target.data[i];
    sum_p += prediction.data[i];
    sum_t += target.data[i];
  }
  const T num = T(2) * inter + eps;
  const T den = sum_p + sum_t + eps;
  Tensor4<T> g = zeros_like(prediction);
  for (std::size_t i = 0; i < prediction.data.size(); ++i)
    g.data[i] = -(T(2) * target.data[i] * den - num) / (den * den);
  return g;
}

}  // namespace fewshot
