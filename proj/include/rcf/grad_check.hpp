// Finite-difference gradient oracle. Compares backward()'s analytic
// gradient of a scalar-valued function against central differences,
// coordinate by coordinate. Meant to run in double; float finite
// differences drown in rounding error.
#pragma once

#include <functional>

#include "rcf/tensor.hpp"

namespace rcf {

// f re-runs the full forward pass reading the current contents of x.
// Returns the max relative error with denominator max(|a|, |n|, 1e-8).
template <class T>
double grad_check(const std::function<Tensor<T>()>& f, Tensor<T>& x, T eps = T(1e-4)) {
  x.set_requires_grad(true);
  x.clear_grad();

  std::vector<T> analytic;
  {
    Tape<T> tape;
    typename Tape<T>::Scope scope(tape);
    Tensor<T> loss = f();
    if (loss.numel() != 1)
      throw shape_error("grad_check: f must be scalar-valued, got " + shape_str(loss.shape()));
    tape.backward(loss);
    analytic = x.grad();
  }

  double worst = 0.0;
  for (size_t i = 0; i < x.numel(); ++i) {
    const T keep = x[i];
    x[i] = keep + eps;
    const double fp = double(f().item());
    x[i] = keep - eps;
    const double fm = double(f().item());
    x[i] = keep;
    const double numeric = (fp - fm) / (2.0 * double(eps));
    const double a = double(analytic[i]);
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  x.clear_grad();
  return worst;
}

}  // namespace rcf
