#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace depthmae {

using Shape = std::vector<std::size_t>;

/// Number of elements described by a shape. The empty shape is a scalar.
std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class AutodiffError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

template <typename T>
class Tensor;

namespace detail {

template <typename T>
struct TensorImpl;

/// One recorded differentiable operation. Owned by the tensor it produced.
template <typename T>
struct Node {
  using ImplPtr = std::shared_ptr<TensorImpl<T>>;
  /// Propagates out.grad into the grads of `inputs`.
  using BackwardFn = std::function<void(const TensorImpl<T>& out, std::span<const ImplPtr> inputs)>;

  std::string op;
  std::vector<ImplPtr> inputs;
  BackwardFn backward;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient reaches this tensor
  bool requires_grad = false;
  std::shared_ptr<Node<T>> node;  // null for leaves

  /// Zero-filled gradient buffer, allocated on first use.
  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Dense row-major tensor with optional reverse-mode gradient tracking.
///
/// A Tensor is a shared handle: copies alias the same storage and gradient.
/// Results of recorded operations keep their inputs alive until the graph is
/// dropped. Only leaves should be mutated in place (optimizer updates).
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using Impl = detail::TensorImpl<T>;

  Tensor();
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const T> data() const { return impl_->data; }
  /// Writable view of a leaf's values. Throws for recorded results.
  std::span<T> mutable_data();
  T item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool value);
  bool is_leaf() const { return impl_->node == nullptr; }
  bool has_grad() const { return !impl_->grad.empty(); }
  /// Accumulated gradient, or an empty span when none has been produced.
  std::span<const T> grad() const { return impl_->grad; }
  void zero_grad() { impl_->grad.clear(); }

  /// Same values, no history, no gradient tracking.
  Tensor detach() const;
  Tensor clone() const;

  const std::shared_ptr<Impl>& impl() const { return impl_; }
  static Tensor from_impl(std::shared_ptr<Impl> impl);

 private:
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

  std::shared_ptr<Impl> impl_;
};

/// Operations recorded for one backward pass, producers before consumers.
template <typename T>
struct ComputationRecord {
  std::vector<std::shared_ptr<detail::TensorImpl<T>>> tensors;
};

/// Builds the topologically ordered record of everything `root` depends on.
template <typename T>
ComputationRecord<T> record_of(const Tensor<T>& root);

/// Reverse accumulation from a scalar loss.
///
/// Leaf gradients accumulate across calls until `zero_grad`; gradients of
/// intermediate results are reset at the start of every call, so calling
/// backward twice on one graph doubles leaf gradients exactly.
template <typename T>
void backward(const Tensor<T>& loss);

/// Disables recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace depthmae
