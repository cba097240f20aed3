// Training objective: masked L1 against sparse lidar plus the edge-aware
// smoothness regularizer,
//   L = w1 * L1 + w2 * mean(|grad_u Y| e^-|grad_u I| + |grad_v Y| e^-|grad_v I|)
// with forward differences and zeroed last row/column. The smoothness term
// is unmasked: it regularizes the dense prediction everywhere.
#pragma once

#include "rcf/ops.hpp"
#include "rcf/tensor.hpp"

namespace rcf {

// mask is a 0/1 map; returns mean |y - ystar| over mask==1 pixels.
template <class T>
Tensor<T> l1_loss(const Tensor<T>& y, const Tensor<T>& ystar, const Tensor<T>& mask) {
  if (y.shape() != ystar.shape() || y.shape() != mask.shape())
    throw shape_error("l1_loss: shapes differ: " + shape_str(y.shape()) + ", " +
                      shape_str(ystar.shape()) + ", " + shape_str(mask.shape()));
  T n_valid{};
  for (size_t i = 0; i < mask.numel(); ++i) n_valid += mask[i];
  if (n_valid == T{}) throw value_error("l1_loss: empty valid mask");
  return scale(sum(mul(abs(sub(y, ystar)), mask)), T(1) / n_valid);
}

// y: [H x W] prediction; img: [H x W x C] the (augmented) camera image.
// Image gradients are reduced to a per-pixel magnitude by a channel mean.
template <class T>
Tensor<T> smoothness_loss(const Tensor<T>& y, const Tensor<T>& img) {
  if (y.rank() != 2 || img.rank() != 3 || img.dim(0) != y.dim(0) || img.dim(1) != y.dim(1))
    throw shape_error("smoothness_loss: y " + shape_str(y.shape()) + " vs img " +
                      shape_str(img.shape()));
  auto wu = exp(scale(mean_last(abs(spatial_gradient(img, 0))), T(-1)));
  auto wv = exp(scale(mean_last(abs(spatial_gradient(img, 1))), T(-1)));
  auto term = add(mul(abs(spatial_gradient(y, 0)), wu), mul(abs(spatial_gradient(y, 1)), wv));
  return mean(term);
}

template <class T>
Tensor<T> total_loss(const Tensor<T>& y, const Tensor<T>& ystar, const Tensor<T>& img,
                     const Tensor<T>& mask, T w1 = T(1), T w2 = T(0.1)) {
  return add(scale(l1_loss(y, ystar, mask), w1), scale(smoothness_loss(y, img), w2));
}

}  // namespace rcf
