#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "peci/error.hpp"

namespace peci::nn {

using Shape = std::vector<int>;

/// Over-aligned storage: vectorized reductions then see the same alignment
/// on every run, which keeps results bit-reproducible.
template <class T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

inline std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Dense row-major array with an optional gradient buffer. Copies of a
/// Tensor share storage; use clone() for a deep copy.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false) : s_(std::make_shared<Storage>()) {
    s_->values.assign(nn::numel(shape), T(0));
    s_->shape = std::move(shape);
    s_->requires_grad = requires_grad;
  }
  Tensor(Shape shape, std::span<const T> values, bool requires_grad = false) : s_(std::make_shared<Storage>()) {
    if (values.size() != nn::numel(shape)) {
      fail(ErrorCode::ShapeMismatch, "value count " + std::to_string(values.size()) + " vs shape " + shape_str(shape));
    }
    s_->shape = std::move(shape);
    s_->values.assign(values.begin(), values.end());
    s_->requires_grad = requires_grad;
  }
  Tensor(Shape shape, const std::vector<T>& values, bool requires_grad = false)
      : Tensor(std::move(shape), std::span<const T>(values), requires_grad) {}

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    std::fill(t.s_->values.begin(), t.s_->values.end(), value);
    return t;
  }
  static Tensor scalar(T value, bool requires_grad = false) { return full({1}, value, requires_grad); }

  bool defined() const noexcept { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  int rank() const { return static_cast<int>(s_->shape.size()); }
  int dim(int i) const { return s_->shape[i < 0 ? s_->shape.size() + i : i]; }
  std::size_t numel() const { return s_->values.size(); }

  std::span<T> values() { return s_->values; }
  std::span<const T> values() const { return s_->values; }
  T* data() { return s_->values.data(); }
  const T* data() const { return s_->values.data(); }
  T& operator[](std::size_t i) { return s_->values[i]; }
  const T& operator[](std::size_t i) const { return s_->values[i]; }

  bool requires_grad() const { return s_ && s_->requires_grad; }
  void set_requires_grad(bool flag) { s_->requires_grad = flag; }

  bool has_grad() const { return !s_->grad.empty(); }
  /// Gradient buffer, allocated as zeros on first access. Like the values,
  /// it belongs to the shared storage, so const handles can accumulate into it.
  std::span<T> grad() const {
    if (s_->grad.empty()) s_->grad.assign(s_->values.size(), T(0));
    return s_->grad;
  }
  T* grad_data() const { return grad().data(); }
  void zero_grad() const { s_->grad.assign(s_->values.size(), T(0)); }
  void drop_grad() const { s_->grad.clear(); }

  T item() const {
    if (numel() != 1) fail(ErrorCode::NotScalar, "item() on a tensor of shape " + shape_str(shape()));
    return s_->values[0];
  }

  Tensor clone() const {
    return Tensor(s_->shape, std::span<const T>(s_->values), s_->requires_grad);
  }
  /// Same values, no gradient tracking, fresh storage.
  Tensor detached() const { return Tensor(s_->shape, std::span<const T>(s_->values), false); }

  bool same_storage(const Tensor& other) const noexcept { return s_ == other.s_; }

 private:
  struct Storage {
    Shape shape;
    Buffer<T> values;
    Buffer<T> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> s_;
};

/// Records backward closures in execution order and replays them in exact
/// reverse order. A tape belongs to one thread at a time.
template <class T>
class Tape {
 public:
  void record(std::function<void()> fn) { ops_.push_back(std::move(fn)); }
  std::size_t size() const noexcept { return ops_.size(); }
  void clear() { ops_.clear(); }

  void backward(Tensor<T>& loss) {
    if (loss.numel() != 1) fail(ErrorCode::NotScalar, "backward needs a scalar loss, got " + shape_str(loss.shape()));
    loss.grad()[0] += T(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    ops_.clear();
  }

 private:
  std::vector<std::function<void()>> ops_;
};

/// True when an op should record itself.
template <class T, class... Ts>
bool tracks(const Tape<T>* tape, const Ts&... inputs) {
  return tape != nullptr && (... || (inputs.defined() && inputs.requires_grad()));
}

}  // namespace peci::nn
