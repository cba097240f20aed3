// Ordered, name-addressable registry of trainable tensors. Construction
// order is the optimizer traversal order, so runs are reproducible.
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "rcf/tensor.hpp"
#include "rcf/util.hpp"

namespace rcf {

template <class T>
class ParamStore {
 public:
  Tensor<T> add(const std::string& name, Tensor<T> t) {
    for (auto& [n, _] : items_)
      if (n == name) throw value_error("param store: duplicate name " + name);
    t.set_requires_grad(true);
    items_.emplace_back(name, t);
    return t;
  }

  Tensor<T>& get(const std::string& name) {
    for (auto& [n, t] : items_)
      if (n == name) return t;
    throw value_error("param store: no parameter named " + name);
  }

  bool has(const std::string& name) const {
    for (auto& [n, _] : items_)
      if (n == name) return true;
    return false;
  }

  const std::vector<std::pair<std::string, Tensor<T>>>& items() const { return items_; }

  std::vector<Tensor<T>> tensors() {
    std::vector<Tensor<T>> out;
    out.reserve(items_.size());
    for (auto& [_, t] : items_) out.push_back(t);
    return out;
  }

  size_t scalar_count() const {
    size_t n = 0;
    for (auto& [_, t] : items_) n += t.numel();
    return n;
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> items_;
};

template <class T>
Tensor<T> trunc_normal_tensor(Shape shape, Rng& rng, double stddev) {
  Tensor<T> t(std::move(shape));
  for (size_t i = 0; i < t.numel(); ++i) t[i] = T(rng.trunc_normal(stddev));
  return t;
}

// He-style init for conv kernels [kh x kw x Cin x Cout]: std = sqrt(2/fan_in).
template <class T>
Tensor<T> conv_init_tensor(Shape shape, Rng& rng) {
  const size_t fan_in = shape[0] * shape[1] * shape[2];
  return trunc_normal_tensor<T>(std::move(shape), rng, std::sqrt(2.0 / double(fan_in)));
}

}  // namespace rcf
