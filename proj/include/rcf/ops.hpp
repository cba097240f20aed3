// Differentiable primitives over Tensor<T>. Each op computes its value
// eagerly and, when a tape is active and an input requires grad, records
// a closure that accumulates into the inputs' gradients. All loops are
// sequential with a fixed iteration order, so results are bit-identical
// across runs.
#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "rcf/tensor.hpp"

namespace rcf {

enum class PadMode { Zero, Circular };

namespace detail {

template <class T>
std::vector<T>& grad_acc(const std::shared_ptr<TensorData<T>>& d) {
  if (d->g.empty()) d->g.assign(d->v.size(), T{});
  return d->g;
}

template <class T>
bool taped(std::initializer_list<const Tensor<T>*> ins) {
  if (!Tape<T>::current()) return false;
  for (auto* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

template <class T>
void record(std::vector<std::shared_ptr<TensorData<T>>> ins, Tensor<T>& out,
            std::function<void()> back) {
  out.set_requires_grad(true);
  Tape<T>::current()->record(std::move(ins), out.ptr(), std::move(back));
}

// c += a*b, a: n x k, b: k x m
template <class T>
void gemm_nn_acc(const T* a, const T* b, T* c, size_t n, size_t k, size_t m) {
  for (size_t i = 0; i < n; ++i) {
    const T* ar = a + i * k;
    T* cr = c + i * m;
    for (size_t p = 0; p < k; ++p) {
      const T av = ar[p];
      const T* br = b + p * m;
      for (size_t j = 0; j < m; ++j) cr[j] += av * br[j];
    }
  }
}

// c += a*b^T, a: n x k, b: m x k
template <class T>
void gemm_nt_acc(const T* a, const T* b, T* c, size_t n, size_t k, size_t m) {
  for (size_t i = 0; i < n; ++i) {
    const T* ar = a + i * k;
    T* cr = c + i * m;
    for (size_t j = 0; j < m; ++j) {
      const T* br = b + j * k;
      T acc{};
      for (size_t p = 0; p < k; ++p) acc += ar[p] * br[p];
      cr[j] += acc;
    }
  }
}

// c += a^T*b, a: n x k, b: n x m, c: k x m
template <class T>
void gemm_tn_acc(const T* a, const T* b, T* c, size_t n, size_t k, size_t m) {
  for (size_t i = 0; i < n; ++i) {
    const T* ar = a + i * k;
    const T* br = b + i * m;
    for (size_t p = 0; p < k; ++p) {
      const T av = ar[p];
      T* cr = c + p * m;
      for (size_t j = 0; j < m; ++j) cr[j] += av * br[j];
    }
  }
}

inline void check_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b)
    throw shape_error(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                      shape_str(b));
}

}  // namespace detail

// ---- elementwise ----

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
  if (detail::taped<T>({&a, &b})) {
    auto ad = a.ptr(), bd = b.ptr(), od = out.ptr();
    detail::record<T>({ad, bd}, out, [ad, bd, od] {
      const auto& g = od->g;
      if (ad->requires_grad) {
        auto& ga = detail::grad_acc(ad);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (bd->requires_grad) {
        auto& gb = detail::grad_acc(bd);
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out(a.shape());
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
  if (detail::taped<T>({&a, &b})) {
    auto ad = a.ptr(), bd = b.ptr(), od = out.ptr();
    detail::record<T>({ad, bd}, out, [ad, bd, od] {
      const auto& g = od->g;
      if (ad->requires_grad) {
        auto& ga = detail::grad_acc(ad);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (bd->requires_grad) {
        auto& gb = detail::grad_acc(bd);
        for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
  if (detail::taped<T>({&a, &b})) {
    auto ad = a.ptr(), bd = b.ptr(), od = out.ptr();
    detail::record<T>({ad, bd}, out, [ad, bd, od] {
      const auto& g = od->g;
      if (ad->requires_grad) {
        auto& ga = detail::grad_acc(ad);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bd->v[i];
      }
      if (bd->requires_grad) {
        auto& gb = detail::grad_acc(bd);
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ad->v[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  Tensor<T> out(a.shape());
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) out[i] = a[i] * c;
  if (detail::taped<T>({&a})) {
    auto ad = a.ptr();
    auto od = out.ptr();
    detail::record<T>({ad}, out, [ad, od, c] {
      auto& ga = detail::grad_acc(ad);
      for (size_t i = 0; i < od->g.size(); ++i) ga[i] += od->g[i] * c;
    });
  }
  return out;
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  Tensor<T> out(a.shape());
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) out[i] = a[i] + c;
  if (detail::taped<T>({&a})) {
    auto ad = a.ptr();
    auto od = out.ptr();
    detail::record<T>({ad}, out, [ad, od] {
      auto& ga = detail::grad_acc(ad);
      for (size_t i = 0; i < od->g.size(); ++i) ga[i] += od->g[i];
    });
  }
  return out;
}

// a: [..., M] plus bias b: [M], broadcast over leading dims.
template <class T>
Tensor<T> add_last(const Tensor<T>& a, const Tensor<T>& b) {
  if (b.rank() != 1 || a.rank() < 1 || a.shape().back() != b.dim(0))
    throw shape_error("add_last: " + shape_str(a.shape()) + " + " + shape_str(b.shape()));
  Tensor<T> out(a.shape());
  const size_t m = b.dim(0);
  const size_t rows = a.numel() / m;
  for (size_t r = 0; r < rows; ++r)
    for (size_t j = 0; j < m; ++j) out[r * m + j] = a[r * m + j] + b[j];
  if (detail::taped<T>({&a, &b})) {
    auto ad = a.ptr(), bd = b.ptr();
    auto od = out.ptr();
    detail::record<T>({ad, bd}, out, [ad, bd, od, rows, m] {
      const auto& g = od->g;
      if (ad->requires_grad) {
        auto& ga = detail::grad_acc(ad);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (bd->requires_grad) {
        auto& gb = detail::grad_acc(bd);
        for (size_t r = 0; r < rows; ++r)
          for (size_t j = 0; j < m; ++j) gb[j] += g[r * m + j];
      }
    });
  }
  return out;
}

// ---- nonlinearities ----

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) out[i] = a[i] > T{} ? a[i] : T{};
  if (detail::taped<T>({&a})) {
    auto ad = a.ptr();
    auto od = out.ptr();
    detail::record<T>({ad}, out, [ad, od] {
      auto& ga = detail::grad_acc(ad);
      for (size_t i = 0; i < od->g.size(); ++i)
        if (ad->v[i] > T{}) ga[i] += od->g[i];
    });
  }
  return out;
}

// GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <class T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr T kC = T(0.7978845608028653559);  // sqrt(2/pi)
  constexpr T kA = T(0.044715);
  Tensor<T> out(a.shape());
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) {
    const T x = a[i];
    out[i] = T(0.5) * x * (T(1) + std::tanh(kC * (x + kA * x * x * x)));
  }
  if (detail::taped<T>({&a})) {
    auto ad = a.ptr();
    auto od = out.ptr();
    detail::record<T>({ad}, out, [ad, od] {
      auto& ga = detail::grad_acc(ad);
      for (size_t i = 0; i < od->g.size(); ++i) {
        const T x = ad->v[i];
        const T th = std::tanh(kC * (x + kA * x * x * x));
        const T du = kC * (T(1) + T(3) * kA * x * x);
        ga[i] += od->g[i] * (T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * du);
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> exp(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) out[i] = std::exp(a[i]);
  if (detail::taped<T>({&a})) {
    auto ad = a.ptr();
    auto od = out.ptr();
    detail::record<T>({ad}, out, [ad, od] {
      auto& ga = detail::grad_acc(ad);
      for (size_t i = 0; i < od->g.size(); ++i) ga[i] += od->g[i] * od->v[i];
    });
  }
  return out;
}

template <class T>
Tensor<T> abs(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) out[i] = std::abs(a[i]);
  if (detail::taped<T>({&a})) {
    auto ad = a.ptr();
    auto od = out.ptr();
    detail::record<T>({ad}, out, [ad, od] {
      auto& ga = detail::grad_acc(ad);
      for (size_t i = 0; i < od->g.size(); ++i) {
        const T x = ad->v[i];
        if (x > T{})
          ga[i] += od->g[i];
        else if (x < T{})
          ga[i] -= od->g[i];
      }
    });
  }
  return out;
}

// ---- matmul / linear ----

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw shape_error("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  Tensor<T> out({n, m});
  detail::gemm_nn_acc(a.vals().data(), b.vals().data(), out.vals().data(), n, k, m);
  debug_check_finite(out.vals(), "matmul");
  if (detail::taped<T>({&a, &b})) {
    auto ad = a.ptr(), bd = b.ptr();
    auto od = out.ptr();
    detail::record<T>({ad, bd}, out, [ad, bd, od, n, k, m] {
      const T* g = od->g.data();
      if (ad->requires_grad)
        detail::gemm_nt_acc(g, bd->v.data(), detail::grad_acc(ad).data(), n, m, k);
      if (bd->requires_grad)
        detail::gemm_tn_acc(ad->v.data(), g, detail::grad_acc(bd).data(), n, k, m);
    });
  }
  return out;
}

// x [N x K] * w [K x M] + b [M]; b may be undefined.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  Tensor<T> y = matmul(x, w);
  return b.defined() ? add_last(y, b) : y;
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) throw shape_error("transpose: need rank 2, got " + shape_str(a.shape()));
  const size_t n = a.dim(0), m = a.dim(1);
  Tensor<T> out({m, n});
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < m; ++j) out[j * n + i] = a[i * m + j];
  if (detail::taped<T>({&a})) {
    auto ad = a.ptr();
    auto od = out.ptr();
    detail::record<T>({ad}, out, [ad, od, n, m] {
      auto& ga = detail::grad_acc(ad);
      for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < m; ++j) ga[i * m + j] += od->g[j * n + i];
    });
  }
  return out;
}

// ---- shape ops ----

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape new_shape) {
  if (shape_numel(new_shape) != a.numel())
    throw shape_error("reshape: " + shape_str(a.shape()) + " -> " + shape_str(new_shape) +
                      " changes element count");
  Tensor<T> out(std::move(new_shape));
  out.vals() = a.vals();
  if (detail::taped<T>({&a})) {
    auto ad = a.ptr();
    auto od = out.ptr();
    detail::record<T>({ad}, out, [ad, od] {
      auto& ga = detail::grad_acc(ad);
      for (size_t i = 0; i < od->g.size(); ++i) ga[i] += od->g[i];
    });
  }
  return out;
}

// Rows [start, start+len) of the leading dimension.
template <class T>
Tensor<T> slice_first(const Tensor<T>& a, size_t start, size_t len) {
  if (a.rank() < 1 || start + len > a.dim(0))
    throw shape_error("slice_first: [" + std::to_string(start) + "," +
                      std::to_string(start + len) + ") out of " + shape_str(a.shape()));
  Shape os = a.shape();
  os[0] = len;
  const size_t row = a.numel() / a.dim(0);
  Tensor<T> out(os);
  std::copy_n(a.vals().data() + start * row, len * row, out.vals().data());
  if (detail::taped<T>({&a})) {
    auto ad = a.ptr();
    auto od = out.ptr();
    detail::record<T>({ad}, out, [ad, od, start, row] {
      auto& ga = detail::grad_acc(ad);
      for (size_t i = 0; i < od->g.size(); ++i) ga[start * row + i] += od->g[i];
    });
  }
  return out;
}

// Columns [start, start+len) of the trailing dimension.
template <class T>
Tensor<T> slice_last(const Tensor<T>& a, size_t start, size_t len) {
  if (a.rank() < 1 || start + len > a.shape().back())
    throw shape_error("slice_last: [" + std::to_string(start) + "," +
                      std::to_string(start + len) + ") out of " + shape_str(a.shape()));
  Shape os = a.shape();
  os.back() = len;
  const size_t m = a.shape().back();
  const size_t rows = a.numel() / m;
  Tensor<T> out(os);
  for (size_t r = 0; r < rows; ++r)
    std::copy_n(a.vals().data() + r * m + start, len, out.vals().data() + r * len);
  if (detail::taped<T>({&a})) {
    auto ad = a.ptr();
    auto od = out.ptr();
    detail::record<T>({ad}, out, [ad, od, start, len, m, rows] {
      auto& ga = detail::grad_acc(ad);
      for (size_t r = 0; r < rows; ++r)
        for (size_t j = 0; j < len; ++j) ga[r * m + start + j] += od->g[r * len + j];
    });
  }
  return out;
}

// Concatenate along the trailing dimension; leading dims must match.
template <class T>
Tensor<T> concat_last(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw shape_error("concat_last: no inputs");
  Shape lead = parts[0].shape();
  lead.pop_back();
  size_t total = 0;
  for (const auto& p : parts) {
    Shape pl = p.shape();
    if (pl.empty()) throw shape_error("concat_last: rank-0 input");
    pl.pop_back();
    if (pl != lead) throw shape_error("concat_last: leading-dim mismatch");
    total += p.shape().back();
  }
  Shape os = parts[0].shape();
  os.back() = total;
  Tensor<T> out(os);
  const size_t rows = out.numel() / total;
  size_t off = 0;
  for (const auto& p : parts) {
    const size_t m = p.shape().back();
    for (size_t r = 0; r < rows; ++r)
      std::copy_n(p.vals().data() + r * m, m, out.vals().data() + r * total + off);
    off += m;
  }
  bool any_grad = false;
  for (const auto& p : parts) any_grad = any_grad || p.requires_grad();
  if (Tape<T>::current() && any_grad) {
    std::vector<std::shared_ptr<TensorData<T>>> ins;
    ins.reserve(parts.size());
    for (const auto& p : parts) ins.push_back(p.ptr());
    auto od = out.ptr();
    auto ins_copy = ins;
    detail::record<T>(std::move(ins), out, [ins_copy, od, rows, total] {
      size_t off = 0;
      for (const auto& pd : ins_copy) {
        const size_t m = pd->v.size() / rows;
        if (pd->requires_grad) {
          auto& gp = detail::grad_acc(pd);
          for (size_t r = 0; r < rows; ++r)
            for (size_t j = 0; j < m; ++j) gp[r * m + j] += od->g[r * total + off + j];
        }
        off += m;
      }
    });
  }
  return out;
}

// [H x W x C] -> [Np x p*p*C]: patches in row-major order, each flattened
// row-major as (ph, pw, c).
template <class T>
Tensor<T> patchify(const Tensor<T>& a, size_t p) {
  if (a.rank() != 3) throw shape_error("patchify: need [H x W x C], got " + shape_str(a.shape()));
  const size_t h = a.dim(0), w = a.dim(1), c = a.dim(2);
  if (p == 0 || h % p || w % p)
    throw shape_error("patchify: patch size " + std::to_string(p) + " does not divide " +
                      shape_str(a.shape()));
  const size_t hp = h / p, wp = w / p;
  Tensor<T> out({hp * wp, p * p * c});
  for (size_t pr = 0; pr < hp; ++pr)
    for (size_t pc = 0; pc < wp; ++pc) {
      T* dst = out.vals().data() + (pr * wp + pc) * p * p * c;
      for (size_t ph = 0; ph < p; ++ph) {
        const T* src = a.vals().data() + ((pr * p + ph) * w + pc * p) * c;
        std::copy_n(src, p * c, dst + ph * p * c);
      }
    }
  if (detail::taped<T>({&a})) {
    auto ad = a.ptr();
    auto od = out.ptr();
    detail::record<T>({ad}, out, [ad, od, p, w, c, hp, wp] {
      auto& ga = detail::grad_acc(ad);
      for (size_t pr = 0; pr < hp; ++pr)
        for (size_t pc = 0; pc < wp; ++pc) {
          const T* gsrc = od->g.data() + (pr * wp + pc) * p * p * c;
          for (size_t ph = 0; ph < p; ++ph) {
            T* gdst = ga.data() + ((pr * p + ph) * w + pc * p) * c;
            for (size_t i = 0; i < p * c; ++i) gdst[i] += gsrc[ph * p * c + i];
          }
        }
    });
  }
  return out;
}

// ---- reductions ----

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  Tensor<T> out({1});
  T acc{};
  for (size_t i = 0; i < a.numel(); ++i) acc += a[i];
  out[0] = acc;
  if (detail::taped<T>({&a})) {
    auto ad = a.ptr();
    auto od = out.ptr();
    detail::record<T>({ad}, out, [ad, od] {
      auto& ga = detail::grad_acc(ad);
      const T g = od->g[0];
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
  }
  return out;
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  Tensor<T> s = sum(a);
  return scale(s, T(1) / T(a.numel()));
}

// ---- softmax / layer norm over the trailing dimension ----

template <class T>
Tensor<T> softmax_last(const Tensor<T>& a) {
  if (a.rank() < 1) throw shape_error("softmax_last: rank-0 input");
  const size_t m = a.shape().back();
  const size_t rows = a.numel() / m;
  Tensor<T> out(a.shape());
  for (size_t r = 0; r < rows; ++r) {
    const T* x = a.vals().data() + r * m;
    T* y = out.vals().data() + r * m;
    T mx = x[0];
    for (size_t j = 1; j < m; ++j) mx = std::max(mx, x[j]);
    T denom{};
    for (size_t j = 0; j < m; ++j) {
      y[j] = std::exp(x[j] - mx);
      denom += y[j];
    }
    const T inv = T(1) / denom;
    for (size_t j = 0; j < m; ++j) y[j] *= inv;
  }
  if (detail::taped<T>({&a})) {
    auto ad = a.ptr();
    auto od = out.ptr();
    detail::record<T>({ad}, out, [ad, od, rows, m] {
      auto& ga = detail::grad_acc(ad);
      for (size_t r = 0; r < rows; ++r) {
        const T* y = od->v.data() + r * m;
        const T* g = od->g.data() + r * m;
        T dot{};
        for (size_t j = 0; j < m; ++j) dot += g[j] * y[j];
        for (size_t j = 0; j < m; ++j) ga[r * m + j] += y[j] * (g[j] - dot);
      }
    });
  }
  return out;
}

// y = (x - mu) / sqrt(var + eps) * gamma + beta over the trailing dim.
template <class T>
Tensor<T> layer_norm_last(const Tensor<T>& a, const Tensor<T>& gamma, const Tensor<T>& beta,
                          T eps = T(1e-5)) {
  const size_t m = a.shape().back();
  if (gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != m || beta.dim(0) != m)
    throw shape_error("layer_norm_last: gamma/beta must be [" + std::to_string(m) + "]");
  const size_t rows = a.numel() / m;
  Tensor<T> out(a.shape());
  std::vector<T> inv_sigma(rows), mu(rows);
  for (size_t r = 0; r < rows; ++r) {
    const T* x = a.vals().data() + r * m;
    T s{};
    for (size_t j = 0; j < m; ++j) s += x[j];
    const T u = s / T(m);
    T v{};
    for (size_t j = 0; j < m; ++j) v += (x[j] - u) * (x[j] - u);
    const T is = T(1) / std::sqrt(v / T(m) + eps);
    mu[r] = u;
    inv_sigma[r] = is;
    T* y = out.vals().data() + r * m;
    for (size_t j = 0; j < m; ++j) y[j] = (x[j] - u) * is * gamma[j] + beta[j];
  }
  if (detail::taped<T>({&a, &gamma, &beta})) {
    auto ad = a.ptr(), gd = gamma.ptr(), bd = beta.ptr();
    auto od = out.ptr();
    detail::record<T>({ad, gd, bd}, out,
                      [ad, gd, bd, od, rows, m, mu = std::move(mu),
                       inv_sigma = std::move(inv_sigma)] {
      for (size_t r = 0; r < rows; ++r) {
        const T* x = ad->v.data() + r * m;
        const T* g = od->g.data() + r * m;
        const T is = inv_sigma[r], u = mu[r];
        if (gd->requires_grad) {
          auto& gg = detail::grad_acc(gd);
          for (size_t j = 0; j < m; ++j) gg[j] += g[j] * (x[j] - u) * is;
        }
        if (bd->requires_grad) {
          auto& gb = detail::grad_acc(bd);
          for (size_t j = 0; j < m; ++j) gb[j] += g[j];
        }
        if (ad->requires_grad) {
          auto& ga = detail::grad_acc(ad);
          // dL/dx = is * (h - mean(h) - xhat * mean(h * xhat)), h = g * gamma
          T mh{}, mhx{};
          for (size_t j = 0; j < m; ++j) {
            const T h = g[j] * gd->v[j];
            const T xh = (x[j] - u) * is;
            mh += h;
            mhx += h * xh;
          }
          mh /= T(m);
          mhx /= T(m);
          for (size_t j = 0; j < m; ++j) {
            const T h = g[j] * gd->v[j];
            const T xh = (x[j] - u) * is;
            ga[r * m + j] += is * (h - mh - xh * mhx);
          }
        }
      }
    });
  }
  return out;
}

// ---- spatial ops on [H x W x C] ----

// w: [kh x kw x Cin x Cout]; b: [Cout] or undefined.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, size_t stride = 1,
                 size_t pad = 0, PadMode pm = PadMode::Zero) {
  if (x.rank() != 3 || w.rank() != 4)
    throw shape_error("conv2d: need x [H x W x C], w [kh x kw x Cin x Cout]");
  const size_t h = x.dim(0), wd = x.dim(1), ci = x.dim(2);
  const size_t kh = w.dim(0), kw = w.dim(1), co = w.dim(3);
  if (w.dim(2) != ci)
    throw shape_error("conv2d: Cin mismatch " + shape_str(x.shape()) + " vs " +
                      shape_str(w.shape()));
  if (b.defined() && (b.rank() != 1 || b.dim(0) != co))
    throw shape_error("conv2d: bias must be [Cout]");
  if (h + 2 * pad < kh || wd + 2 * pad < kw) throw shape_error("conv2d: kernel larger than input");
  if (stride == 0) throw value_error("conv2d: stride must be positive");
  const size_t ho = (h + 2 * pad - kh) / stride + 1;
  const size_t wo = (wd + 2 * pad - kw) / stride + 1;
  Tensor<T> out({ho, wo, co});
  const auto wrap = [](ptrdiff_t i, size_t n) {
    ptrdiff_t m = i % ptrdiff_t(n);
    return size_t(m < 0 ? m + ptrdiff_t(n) : m);
  };
  for (size_t oh = 0; oh < ho; ++oh)
    for (size_t ow = 0; ow < wo; ++ow) {
      T* op = out.vals().data() + (oh * wo + ow) * co;
      if (b.defined())
        for (size_t c = 0; c < co; ++c) op[c] = b[c];
      for (size_t ki = 0; ki < kh; ++ki) {
        const ptrdiff_t ih0 = ptrdiff_t(oh * stride + ki) - ptrdiff_t(pad);
        size_t ih;
        if (pm == PadMode::Zero) {
          if (ih0 < 0 || ih0 >= ptrdiff_t(h)) continue;
          ih = size_t(ih0);
        } else {
          ih = wrap(ih0, h);
        }
        for (size_t kj = 0; kj < kw; ++kj) {
          const ptrdiff_t iw0 = ptrdiff_t(ow * stride + kj) - ptrdiff_t(pad);
          size_t iw;
          if (pm == PadMode::Zero) {
            if (iw0 < 0 || iw0 >= ptrdiff_t(wd)) continue;
            iw = size_t(iw0);
          } else {
            iw = wrap(iw0, wd);
          }
          const T* xp = x.vals().data() + (ih * wd + iw) * ci;
          const T* wp = w.vals().data() + (ki * kw + kj) * ci * co;
          for (size_t c = 0; c < ci; ++c) {
            const T xv = xp[c];
            const T* wr = wp + c * co;
            for (size_t oc = 0; oc < co; ++oc) op[oc] += xv * wr[oc];
          }
        }
      }
    }
  debug_check_finite(out.vals(), "conv2d");
  const bool bias_grad = b.defined() && b.requires_grad();
  if (Tape<T>::current() && (x.requires_grad() || w.requires_grad() || bias_grad)) {
    std::vector<std::shared_ptr<TensorData<T>>> ins{x.ptr(), w.ptr()};
    if (b.defined()) ins.push_back(b.ptr());
    auto xd = x.ptr(), wdp = w.ptr();
    auto bdp = b.defined() ? b.ptr() : nullptr;
    auto od = out.ptr();
    detail::record<T>(std::move(ins), out,
                      [xd, wdp, bdp, od, h, wd, ci, kh, kw, co, ho, wo, stride, pad, pm, wrap] {
      const T* g = od->g.data();
      T* gx = xd->requires_grad ? detail::grad_acc(xd).data() : nullptr;
      T* gw = wdp->requires_grad ? detail::grad_acc(wdp).data() : nullptr;
      if (bdp && bdp->requires_grad) {
        auto& gb = detail::grad_acc(bdp);
        for (size_t oh = 0; oh < ho; ++oh)
          for (size_t ow = 0; ow < wo; ++ow)
            for (size_t c = 0; c < co; ++c) gb[c] += g[(oh * wo + ow) * co + c];
      }
      if (!gx && !gw) return;
      for (size_t oh = 0; oh < ho; ++oh)
        for (size_t ow = 0; ow < wo; ++ow) {
          const T* gp = g + (oh * wo + ow) * co;
          for (size_t ki = 0; ki < kh; ++ki) {
            const ptrdiff_t ih0 = ptrdiff_t(oh * stride + ki) - ptrdiff_t(pad);
            size_t ih;
            if (pm == PadMode::Zero) {
              if (ih0 < 0 || ih0 >= ptrdiff_t(h)) continue;
              ih = size_t(ih0);
            } else {
              ih = wrap(ih0, h);
            }
            for (size_t kj = 0; kj < kw; ++kj) {
              const ptrdiff_t iw0 = ptrdiff_t(ow * stride + kj) - ptrdiff_t(pad);
              size_t iw;
              if (pm == PadMode::Zero) {
                if (iw0 < 0 || iw0 >= ptrdiff_t(wd)) continue;
                iw = size_t(iw0);
              } else {
                iw = wrap(iw0, wd);
              }
              const T* xp = xd->v.data() + (ih * wd + iw) * ci;
              const T* wp = wdp->v.data() + (ki * kw + kj) * ci * co;
              for (size_t c = 0; c < ci; ++c) {
                if (gx) {
                  const T* wr = wp + c * co;
                  T acc{};
                  for (size_t oc = 0; oc < co; ++oc) acc += gp[oc] * wr[oc];
                  gx[(ih * wd + iw) * ci + c] += acc;
                }
                if (gw) {
                  const T xv = xp[c];
                  T* gwr = gw + (ki * kw + kj) * ci * co + c * co;
                  for (size_t oc = 0; oc < co; ++oc) gwr[oc] += xv * gp[oc];
                }
              }
            }
          }
        }
    });
  }
  return out;
}

// Transposed conv, no padding: out is [(H-1)*s + kh, (W-1)*s + kw, Cout].
// With kh == kw == s this is an exact x s upsampling.
template <class T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                           size_t stride) {
  if (x.rank() != 3 || w.rank() != 4)
    throw shape_error("conv_transpose2d: need x [H x W x C], w [kh x kw x Cin x Cout]");
  const size_t h = x.dim(0), wd = x.dim(1), ci = x.dim(2);
  const size_t kh = w.dim(0), kw = w.dim(1), co = w.dim(3);
  if (w.dim(2) != ci) throw shape_error("conv_transpose2d: Cin mismatch");
  if (b.defined() && (b.rank() != 1 || b.dim(0) != co))
    throw shape_error("conv_transpose2d: bias must be [Cout]");
  if (stride == 0) throw value_error("conv_transpose2d: stride must be positive");
  const size_t ho = (h - 1) * stride + kh;
  const size_t wo = (wd - 1) * stride + kw;
  Tensor<T> out({ho, wo, co});
  if (b.defined())
    for (size_t i = 0; i < ho * wo; ++i)
      for (size_t c = 0; c < co; ++c) out[i * co + c] = b[c];
  for (size_t ih = 0; ih < h; ++ih)
    for (size_t iw = 0; iw < wd; ++iw) {
      const T* xp = x.vals().data() + (ih * wd + iw) * ci;
      for (size_t ki = 0; ki < kh; ++ki)
        for (size_t kj = 0; kj < kw; ++kj) {
          T* op = out.vals().data() + ((ih * stride + ki) * wo + iw * stride + kj) * co;
          const T* wp = w.vals().data() + (ki * kw + kj) * ci * co;
          for (size_t c = 0; c < ci; ++c) {
            const T xv = xp[c];
            const T* wr = wp + c * co;
            for (size_t oc = 0; oc < co; ++oc) op[oc] += xv * wr[oc];
          }
        }
    }
  debug_check_finite(out.vals(), "conv_transpose2d");
  const bool bias_grad = b.defined() && b.requires_grad();
  if (Tape<T>::current() && (x.requires_grad() || w.requires_grad() || bias_grad)) {
    std::vector<std::shared_ptr<TensorData<T>>> ins{x.ptr(), w.ptr()};
    if (b.defined()) ins.push_back(b.ptr());
    auto xd = x.ptr(), wdp = w.ptr();
    auto bdp = b.defined() ? b.ptr() : nullptr;
    auto od = out.ptr();
    detail::record<T>(std::move(ins), out, [xd, wdp, bdp, od, h, wd, ci, kh, kw, co, wo, stride] {
      const T* g = od->g.data();
      T* gx = xd->requires_grad ? detail::grad_acc(xd).data() : nullptr;
      T* gw = wdp->requires_grad ? detail::grad_acc(wdp).data() : nullptr;
      if (bdp && bdp->requires_grad) {
        auto& gb = detail::grad_acc(bdp);
        const size_t npix = od->v.size() / bdp->v.size();
        const size_t nco = bdp->v.size();
        for (size_t i = 0; i < npix; ++i)
          for (size_t c = 0; c < nco; ++c) gb[c] += g[i * nco + c];
      }
      if (!gx && !gw) return;
      for (size_t ih = 0; ih < h; ++ih)
        for (size_t iw = 0; iw < wd; ++iw) {
          const T* xp = xd->v.data() + (ih * wd + iw) * ci;
          for (size_t ki = 0; ki < kh; ++ki)
            for (size_t kj = 0; kj < kw; ++kj) {
              const T* gp = g + ((ih * stride + ki) * wo + iw * stride + kj) * co;
              const T* wp = wdp->v.data() + (ki * kw + kj) * ci * co;
              for (size_t c = 0; c < ci; ++c) {
                if (gx) {
                  const T* wr = wp + c * co;
                  T acc{};
                  for (size_t oc = 0; oc < co; ++oc) acc += gp[oc] * wr[oc];
                  gx[(ih * wd + iw) * ci + c] += acc;
                }
                if (gw) {
                  const T xv = xp[c];
                  T* gwr = gw + (ki * kw + kj) * ci * co + c * co;
                  for (size_t oc = 0; oc < co; ++oc) gwr[oc] += xv * gp[oc];
                }
              }
            }
        }
    });
  }
  return out;
}

namespace detail {

// Half-pixel source taps for 1D bilinear upsampling by an integer factor.
struct LerpTap {
  size_t i0, i1;
  double w0, w1;
};

inline std::vector<LerpTap> lerp_taps(size_t n, size_t factor, PadMode pm) {
  std::vector<LerpTap> taps(n * factor);
  for (size_t o = 0; o < n * factor; ++o) {
    const double src = (double(o) + 0.5) / double(factor) - 0.5;
    double fl = std::floor(src);
    const double w1 = src - fl;
    ptrdiff_t i0 = ptrdiff_t(fl), i1 = i0 + 1;
    if (pm == PadMode::Zero) {  // clamp-to-edge
      i0 = std::clamp<ptrdiff_t>(i0, 0, ptrdiff_t(n) - 1);
      i1 = std::clamp<ptrdiff_t>(i1, 0, ptrdiff_t(n) - 1);
    } else {  // toroidal wrap
      i0 = (i0 % ptrdiff_t(n) + ptrdiff_t(n)) % ptrdiff_t(n);
      i1 = (i1 % ptrdiff_t(n) + ptrdiff_t(n)) % ptrdiff_t(n);
    }
    taps[o] = {size_t(i0), size_t(i1), 1.0 - w1, w1};
  }
  return taps;
}

}  // namespace detail

// Bilinear upsampling by an integer factor, half-pixel alignment. PadMode::Zero
// clamps at the border (the standard convention); Circular wraps toroidally.
template <class T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, size_t factor, PadMode pm = PadMode::Zero) {
  if (x.rank() != 3) throw shape_error("upsample_bilinear: need [H x W x C]");
  if (factor == 0) throw value_error("upsample_bilinear: factor must be positive");
  const size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  Tensor<T> out({h * factor, w * factor, c});
  auto rt = detail::lerp_taps(h, factor, pm);
  auto ct = detail::lerp_taps(w, factor, pm);
  const size_t wo = w * factor;
  for (size_t oh = 0; oh < h * factor; ++oh) {
    const auto& r = rt[oh];
    for (size_t ow = 0; ow < wo; ++ow) {
      const auto& q = ct[ow];
      const T* p00 = x.vals().data() + (r.i0 * w + q.i0) * c;
      const T* p01 = x.vals().data() + (r.i0 * w + q.i1) * c;
      const T* p10 = x.vals().data() + (r.i1 * w + q.i0) * c;
      const T* p11 = x.vals().data() + (r.i1 * w + q.i1) * c;
      const T w00 = T(r.w0 * q.w0), w01 = T(r.w0 * q.w1);
      const T w10 = T(r.w1 * q.w0), w11 = T(r.w1 * q.w1);
      T* op = out.vals().data() + (oh * wo + ow) * c;
      for (size_t k = 0; k < c; ++k)
        op[k] = w00 * p00[k] + w01 * p01[k] + w10 * p10[k] + w11 * p11[k];
    }
  }
  if (detail::taped<T>({&x})) {
    auto xd = x.ptr();
    auto od = out.ptr();
    detail::record<T>({xd}, out, [xd, od, h, w, c, rt = std::move(rt), ct = std::move(ct)] {
      auto& gx = detail::grad_acc(xd);
      const size_t factor = od->shape[0] / h;
      const size_t wo = w * factor;
      for (size_t oh = 0; oh < h * factor; ++oh) {
        const auto& r = rt[oh];
        for (size_t ow = 0; ow < wo; ++ow) {
          const auto& q = ct[ow];
          const T* gp = od->g.data() + (oh * wo + ow) * c;
          T* g00 = gx.data() + (r.i0 * w + q.i0) * c;
          T* g01 = gx.data() + (r.i0 * w + q.i1) * c;
          T* g10 = gx.data() + (r.i1 * w + q.i0) * c;
          T* g11 = gx.data() + (r.i1 * w + q.i1) * c;
          const T w00 = T(r.w0 * q.w0), w01 = T(r.w0 * q.w1);
          const T w10 = T(r.w1 * q.w0), w11 = T(r.w1 * q.w1);
          for (size_t k = 0; k < c; ++k) {
            g00[k] += w00 * gp[k];
            g01[k] += w01 * gp[k];
            g10[k] += w10 * gp[k];
            g11[k] += w11 * gp[k];
          }
        }
      }
    });
  }
  return out;
}

// Forward difference along axis (0 = rows/u, 1 = cols/v); the trailing
// row/column of the output is zero. Input is [H x W] or [H x W x C].
template <class T>
Tensor<T> spatial_gradient(const Tensor<T>& a, size_t axis) {
  if (a.rank() != 2 && a.rank() != 3)
    throw shape_error("spatial_gradient: need [H x W] or [H x W x C], got " +
                      shape_str(a.shape()));
  if (axis > 1) throw value_error("spatial_gradient: axis must be 0 or 1");
  const size_t h = a.dim(0), w = a.dim(1);
  const size_t c = a.rank() == 3 ? a.dim(2) : 1;
  Tensor<T> out(a.shape());
  const size_t dh = axis == 0 ? h - 1 : h;
  const size_t dw = axis == 1 ? w - 1 : w;
  const size_t step = (axis == 0 ? w : 1) * c;
  for (size_t i = 0; i < dh; ++i)
    for (size_t j = 0; j < dw; ++j) {
      const size_t base = (i * w + j) * c;
      for (size_t k = 0; k < c; ++k) out[base + k] = a[base + step + k] - a[base + k];
    }
  if (detail::taped<T>({&a})) {
    auto ad = a.ptr();
    auto od = out.ptr();
    detail::record<T>({ad}, out, [ad, od, w, c, dh, dw, step] {
      auto& ga = detail::grad_acc(ad);
      for (size_t i = 0; i < dh; ++i)
        for (size_t j = 0; j < dw; ++j) {
          const size_t base = (i * w + j) * c;
          for (size_t k = 0; k < c; ++k) {
            ga[base + step + k] += od->g[base + k];
            ga[base + k] -= od->g[base + k];
          }
        }
    });
  }
  return out;
}

// Mean over the trailing dimension: [... x C] -> [...].
template <class T>
Tensor<T> mean_last(const Tensor<T>& a) {
  if (a.rank() < 2) throw shape_error("mean_last: need rank >= 2, got " + shape_str(a.shape()));
  const size_t c = a.shape().back();
  Shape os(a.shape().begin(), a.shape().end() - 1);
  Tensor<T> out(os);
  const size_t rows = out.numel();
  const T inv = T(1) / T(c);
  for (size_t r = 0; r < rows; ++r) {
    T acc{};
    for (size_t k = 0; k < c; ++k) acc += a[r * c + k];
    out[r] = acc * inv;
  }
  if (detail::taped<T>({&a})) {
    auto ad = a.ptr();
    auto od = out.ptr();
    detail::record<T>({ad}, out, [ad, od, rows, c, inv] {
      auto& ga = detail::grad_acc(ad);
      for (size_t r = 0; r < rows; ++r)
        for (size_t k = 0; k < c; ++k) ga[r * c + k] += od->g[r] * inv;
    });
  }
  return out;
}

}  // namespace rcf
