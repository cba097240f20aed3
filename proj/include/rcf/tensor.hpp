// Dense row-major tensor with tape-based reverse-mode autodiff.
//
// Tensor<T> is a cheap shared handle to shape + values + (lazy) gradient.
// Operations (ops.hpp) record backward closures onto the thread-local
// active Tape<T>; one reverse sweep over the tape fills the gradients of
// every reachable leaf and consumes the tape. T is float for training
// and double for gradient checking.
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace rcf {

#if !defined(NDEBUG) && !defined(RCF_NO_DEBUG_CHECKS)
#define RCF_DEBUG_CHECKS 1
#else
#define RCF_DEBUG_CHECKS 0
#endif

struct shape_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct value_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct format_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<size_t>;

inline size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

template <class T>
struct TensorData {
  Shape shape;
  std::vector<T> v;
  std::vector<T> g;  // empty until backward reaches this node
  bool requires_grad = false;
};

template <class T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{})
      : d_(std::make_shared<TensorData<T>>()) {
    for (size_t d : shape)
      if (d == 0) throw shape_error("tensor dims must be positive, got " + shape_str(shape));
    d_->shape = std::move(shape);
    d_->v.assign(shape_numel(d_->shape), fill);
  }

  static Tensor from(Shape shape, std::vector<T> vals) {
    Tensor t(std::move(shape));
    if (vals.size() != t.numel())
      throw shape_error("value count " + std::to_string(vals.size()) +
                        " does not match shape " + shape_str(t.shape()));
    t.d_->v = std::move(vals);
    return t;
  }

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  size_t rank() const { return d_->shape.size(); }
  size_t dim(size_t i) const { return d_->shape.at(i); }
  size_t numel() const { return d_->v.size(); }

  std::vector<T>& vals() { return d_->v; }
  const std::vector<T>& vals() const { return d_->v; }
  T& operator[](size_t i) { return d_->v[i]; }
  const T& operator[](size_t i) const { return d_->v[i]; }

  T& at2(size_t r, size_t c) { return d_->v[r * d_->shape[1] + c]; }
  const T& at2(size_t r, size_t c) const { return d_->v[r * d_->shape[1] + c]; }
  T& at3(size_t i, size_t j, size_t k) {
    return d_->v[(i * d_->shape[1] + j) * d_->shape[2] + k];
  }
  const T& at3(size_t i, size_t j, size_t k) const {
    return d_->v[(i * d_->shape[1] + j) * d_->shape[2] + k];
  }

  T item() const {
    if (numel() != 1) throw shape_error("item() on non-scalar tensor " + shape_str(shape()));
    return d_->v[0];
  }

  bool requires_grad() const { return d_ && d_->requires_grad; }
  Tensor& set_requires_grad(bool rg = true) {
    d_->requires_grad = rg;
    return *this;
  }

  bool has_grad() const { return d_ && !d_->g.empty(); }
  std::vector<T>& grad() {
    if (!has_grad()) throw value_error("tensor has no gradient");
    return d_->g;
  }
  const std::vector<T>& grad() const {
    if (!has_grad()) throw value_error("tensor has no gradient");
    return d_->g;
  }
  void clear_grad() { d_->g.clear(); }
  std::vector<T>& ensure_grad() {
    if (d_->g.empty()) d_->g.assign(d_->v.size(), T{});
    return d_->g;
  }

  // Deep copy of the values; the copy does not require grad.
  Tensor clone() const {
    Tensor t;
    t.d_ = std::make_shared<TensorData<T>>();
    t.d_->shape = d_->shape;
    t.d_->v = d_->v;
    return t;
  }

  const std::shared_ptr<TensorData<T>>& ptr() const { return d_; }

 private:
  std::shared_ptr<TensorData<T>> d_;
};

template <class T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current() { return cur_(); }

  // RAII activation; ops record only while a tape is active on this thread.
  class Scope {
   public:
    explicit Scope(Tape& t) : prev_(cur_()) { cur_() = &t; }
    ~Scope() { cur_() = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  void record(std::vector<std::shared_ptr<TensorData<T>>> inputs,
              std::shared_ptr<TensorData<T>> output,
              std::function<void()> backward_fn) {
    for (auto& in : inputs)
      if (in->requires_grad) grad_inputs_.push_back(in);
    entries_.push_back(Entry{std::move(backward_fn), std::move(output)});
  }

  size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  void clear() {
    entries_.clear();
    grad_inputs_.clear();
  }

  // Reverse sweep from a scalar loss. Fills grad on every requires_grad
  // tensor that fed a recorded op (zeros if disconnected from the loss)
  // and consumes the tape.
  void backward(Tensor<T>& loss) {
    if (loss.numel() != 1)
      throw shape_error("backward: loss must be scalar, got " + shape_str(loss.shape()));
    if (!loss.requires_grad())
      throw value_error("backward: loss does not depend on any grad-enabled tensor");
    loss.ptr()->g.assign(1, T(1));
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (it->out->g.empty()) continue;  // no gradient flowed to this node
      it->back();
    }
    last_disconnected_ = 0;
    for (auto& in : grad_inputs_) {
      if (in->requires_grad && in->g.empty()) {
        in->g.assign(in->v.size(), T{});
        ++last_disconnected_;  // recorded but unreachable from the loss
      }
    }
    clear();
  }

  // How many grad-requiring inputs the last backward zero-filled because no
  // gradient reached them.
  size_t last_disconnected() const { return last_disconnected_; }

 private:
  struct Entry {
    std::function<void()> back;
    std::shared_ptr<TensorData<T>> out;
  };

  static Tape*& cur_() {
    thread_local Tape* t = nullptr;
    return t;
  }

  std::vector<Entry> entries_;
  std::vector<std::shared_ptr<TensorData<T>>> grad_inputs_;
  size_t last_disconnected_ = 0;
};

template <class T>
void backward(Tensor<T>& loss) {
  Tape<T>* t = Tape<T>::current();
  if (!t) throw value_error("backward: no active tape");
  t->backward(loss);
}

template <class T>
inline void debug_check_finite(const std::vector<T>& vals, const char* op) {
#if RCF_DEBUG_CHECKS
  for (T x : vals)
    if (!std::isfinite(static_cast<double>(x)))
      throw value_error(std::string(op) + " produced a non-finite value");
#else
  (void)vals;
  (void)op;
#endif
}

}  // namespace rcf
