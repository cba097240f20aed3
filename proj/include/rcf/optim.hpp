// SGD with momentum and (coupled) weight decay, plus the polynomial
// learning-rate schedule. Update rule per parameter:
//   v <- momentum*v + grad + weight_decay*param
//   param <- param - lr*v
#pragma once

#include <cmath>
#include <unordered_map>
#include <vector>

#include "rcf/tensor.hpp"

namespace rcf {

template <class T>
class SgdOptimizer {
 public:
  SgdOptimizer(T momentum, T weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  void sgd_step(std::vector<Tensor<T>>& params, T lr) {
    for (auto& p : params) {
      if (!p.has_grad()) throw value_error("sgd_step: parameter is missing its gradient");
      auto& v = velocity_[p.ptr().get()];
      if (v.empty()) v.assign(p.numel(), T{});
      const auto& g = p.grad();
      for (size_t i = 0; i < p.numel(); ++i) {
        v[i] = momentum_ * v[i] + g[i] + weight_decay_ * p[i];
        p[i] -= lr * v[i];
      }
      p.clear_grad();
    }
  }

  T momentum() const { return momentum_; }
  T weight_decay() const { return weight_decay_; }

 private:
  T momentum_, weight_decay_;
  std::unordered_map<const TensorData<T>*, std::vector<T>> velocity_;
};

// lr = lr0 * (1 - step/max_steps)^power, the polynomial decay schedule.
inline double lr_schedule(size_t step, size_t max_steps, double lr0, double power) {
  if (max_steps == 0) throw value_error("lr_schedule: max_steps must be positive");
  if (step > max_steps) throw value_error("lr_schedule: step past max_steps");
  return lr0 * std::pow(1.0 - double(step) / double(max_steps), power);
}

}  // namespace rcf
