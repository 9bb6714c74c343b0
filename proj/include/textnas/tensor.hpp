#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "textnas/error.hpp"

namespace textnas {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '<';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << '>';
  return os.str();
}

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something flows into it
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
  }
};

/// Dense row-major tensor with shared ownership of its storage. Copies of a
/// Tensor alias the same storage; use clone() for a deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
      : impl_(std::make_shared<TensorImpl<T>>()) {
    for (auto d : shape) {
      if (d == 0) throw DimensionError("zero-sized dimension in " + shape_str(shape));
    }
    impl_->data.assign(shape_numel(shape), fill);
    impl_->shape = std::move(shape);
    impl_->requires_grad = requires_grad;
  }

  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (shape_numel(shape) != values.size()) {
      throw DimensionError("value count " + std::to_string(values.size()) +
                           " does not match shape " + shape_str(shape));
    }
    Tensor t(std::move(shape), T(0), requires_grad);
    t.impl_->data = std::move(values);
    return t;
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return from({1}, {value}, requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  std::vector<T> to_vector() const { return impl_->data; }
  T item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
  }
  T& operator[](std::size_t i) { return impl_->data[i]; }
  T operator[](std::size_t i) const { return impl_->data[i]; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<T> grad() { return impl_->grad; }
  std::span<const T> grad() const { return impl_->grad; }
  void zero_grad() { impl_->grad.clear(); }
  /// Allocates a zero gradient so optimizers treat the tensor as touched.
  void ensure_grad() { impl_->ensure_grad(); }

  Tensor clone() const {
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl<T>>(*impl_);
    t.impl_->grad.clear();
    return t;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> values(numel());
    std::transform(impl_->data.begin(), impl_->data.end(), values.begin(),
                   [](T v) { return static_cast<U>(v); });
    return Tensor<U>::from(shape(), std::move(values), requires_grad());
  }

  /// Shared-storage identity (weight sharing is by identity, not by copy).
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }
  static Tensor wrap(std::shared_ptr<TensorImpl<T>> impl) {
    Tensor t;
    t.impl_ = std::move(impl);
    return t;
  }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

/// Ordered record of backward closures. Entries are appended in execution
/// order, hence topologically sorted. A disabled tape records nothing and is
/// used for inference.
template <typename T>
class Tape {
 public:
  explicit Tape(bool enabled = true) : enabled_(enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool enabled() const { return enabled_; }
  std::size_t size() const { return entries_.size(); }

  void record(std::function<void()> backward_fn) {
    if (consumed_) throw UsageError("tape already consumed by backward; record a new tape");
    entries_.push_back(std::move(backward_fn));
  }

  /// Reverse traversal from a scalar loss. Gradients accumulate (sum over uses).
  void backward(Tensor<T> loss) {
    if (!enabled_) throw UsageError("backward on a disabled tape");
    if (consumed_) throw UsageError("second backward on the same tape");
    if (loss.numel() != 1) {
      throw UsageError("backward requires a scalar loss, got " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) throw UsageError("loss is not on the tape");
    consumed_ = true;
    loss.ensure_grad();
    loss.grad()[0] += T(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    entries_.clear();
  }

 private:
  std::vector<std::function<void()>> entries_;
  bool enabled_;
  bool consumed_ = false;
};

}  // namespace textnas
