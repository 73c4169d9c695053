#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ucdr/errors.hpp"
#include "ucdr/util.hpp"

namespace ucdr {

using Shape = std::vector<std::size_t>;

inline std::string shape_to_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  out += "]";
  return out;
}

inline std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  const void* tape = nullptr;  // tape that recorded this value, if any
};

template <typename T>
class Tape;

// Dense row-major tensor with shared-handle semantics. Copying a Tensor
// copies the handle; clone() copies the contents.
template <typename T>
class Tensor {
 public:
  Tensor() : s_(std::make_shared<TensorStorage<T>>(TensorStorage<T>{{}, {T(0)}, {}, false, nullptr})) {}

  static Tensor zeros(Shape shape) {
    auto s = std::make_shared<TensorStorage<T>>();
    s->shape = std::move(shape);
    s->data.assign(shape_size(s->shape), T(0));
    return Tensor(std::move(s));
  }

  static Tensor full(Shape shape, T value) {
    Tensor t = zeros(std::move(shape));
    for (T& v : t.s_->data) v = value;
    return t;
  }

  static Tensor scalar(T value) { return full({}, value); }

  static Tensor from_data(Shape shape, std::vector<T> values) {
    if (shape_size(shape) != values.size()) {
      throw ContractError("from_data: shape " + shape_to_string(shape) + " needs " +
                          std::to_string(shape_size(shape)) + " values, got " +
                          std::to_string(values.size()));
    }
    auto s = std::make_shared<TensorStorage<T>>();
    s->shape = std::move(shape);
    s->data = std::move(values);
    return Tensor(std::move(s));
  }

  static Tensor gaussian(Shape shape, std::mt19937& rng, T stddev, T mean = T(0)) {
    Tensor t = zeros(std::move(shape));
    std::normal_distribution<double> dist(0.0, 1.0);
    for (T& v : t.s_->data) v = mean + stddev * static_cast<T>(dist(rng));
    return t;
  }

  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t size() const { return s_->data.size(); }

  std::span<const T> data() const { return {s_->data.data(), s_->data.size()}; }
  std::span<T> data() { return {s_->data.data(), s_->data.size()}; }

  T item() const {
    if (size() != 1) {
      throw ContractError("item: tensor has shape " + shape_to_string(s_->shape) + ", expected a single element");
    }
    return s_->data[0];
  }

  T at(std::size_t i) const {
    if (i >= size()) throw ContractError("at: index " + std::to_string(i) + " out of range");
    return s_->data[i];
  }

  bool requires_grad() const { return s_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    s_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return !s_->grad.empty(); }
  std::span<const T> grad() const { return {s_->grad.data(), s_->grad.size()}; }

  void zero_grad() { s_->grad.clear(); }

  void accumulate_grad(std::span<const T> g) {
    if (g.size() != size()) {
      throw ContractError("accumulate_grad: got " + std::to_string(g.size()) + " values for tensor of size " +
                          std::to_string(size()));
    }
    if (s_->grad.empty()) s_->grad.assign(size(), T(0));
    for (std::size_t i = 0; i < g.size(); ++i) s_->grad[i] += g[i];
  }

  // Deep copy detached from any tape; gradients are not copied.
  Tensor clone() const {
    auto s = std::make_shared<TensorStorage<T>>();
    s->shape = s_->shape;
    s->data = s_->data;
    return Tensor(std::move(s));
  }

  bool same_storage(const Tensor& other) const { return s_ == other.s_; }

  const std::shared_ptr<TensorStorage<T>>& storage() const { return s_; }

 private:
  explicit Tensor(std::shared_ptr<TensorStorage<T>> s) : s_(std::move(s)) {}
  std::shared_ptr<TensorStorage<T>> s_;
  friend class Tape<T>;
};

// Linear record of differentiable steps. Ops append while a TapeScope is
// active; backward() replays the record in reverse. Gradients of leaf
// tensors (requires_grad) accumulate across backward calls until zeroed;
// intermediate gradients are reset at the start of every backward pass.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape*& current() {
    static thread_local Tape* active = nullptr;
    return active;
  }

  bool tracks(const Tensor<T>& t) const { return t.requires_grad() || t.storage()->tape == this; }

  void record(std::shared_ptr<TensorStorage<T>> output, std::function<void()> backprop) {
    output->tape = this;
    steps_.push_back(Step{std::move(output), std::move(backprop)});
  }

  std::size_t step_count() const { return steps_.size(); }

  void backward(const Tensor<T>& output) {
    if (output.size() != 1) {
      throw ContractError("backward: output must be scalar, got shape " + shape_to_string(output.shape()));
    }
    if (output.storage()->tape != this) {
      warn("backward called on a tensor this tape did not produce; no gradients propagated");
      return;
    }
    for (Step& s : steps_) s.output->grad.clear();
    output.storage()->grad.assign(1, T(1));
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
      if (!it->output->grad.empty()) it->backprop();
    }
  }

 private:
  struct Step {
    std::shared_ptr<TensorStorage<T>> output;
    std::function<void()> backprop;
  };
  std::vector<Step> steps_;
};

// Activates a tape for the current thread for the lifetime of the scope.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : prev_(Tape<T>::current()) { Tape<T>::current() = &tape; }
  ~TapeScope() { Tape<T>::current() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* prev_;
};

// Suspends recording; values computed inside are constants to any tape.
template <typename T>
class GradPause {
 public:
  GradPause() : prev_(Tape<T>::current()) { Tape<T>::current() = nullptr; }
  ~GradPause() { Tape<T>::current() = prev_; }
  GradPause(const GradPause&) = delete;
  GradPause& operator=(const GradPause&) = delete;

 private:
  Tape<T>* prev_;
};

namespace detail {

template <typename T>
bool wants_grad(const TensorStorage<T>& s, const Tape<T>* tape) {
  return s.requires_grad || s.tape == tape;
}

template <typename T>
std::vector<T>& grad_buffer(TensorStorage<T>& s) {
  if (s.grad.empty()) s.grad.assign(s.data.size(), T(0));
  return s.grad;
}

}  // namespace detail

}  // namespace ucdr
