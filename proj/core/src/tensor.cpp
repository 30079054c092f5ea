#include "depthmae/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace depthmae {

namespace {
thread_local bool t_grad_enabled = true;
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

template <typename T>
Tensor<T>::Tensor() : Tensor(Shape{}, std::vector<T>{T(0)}) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("shape " + shape_string(shape) + " needs " + std::to_string(shape_numel(shape)) +
                     " values, got " + std::to_string(data.size()));
  }
  impl_ = std::make_shared<Impl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<T>{value}, requires_grad);
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape()));
  }
  return impl_->shape[axis];
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  if (!is_leaf()) throw AutodiffError("in-place write to a recorded result");
  return impl_->data;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
  return impl_->data.front();
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool value) {
  if (!is_leaf()) throw AutodiffError("requires_grad can only be changed on leaves");
  impl_->requires_grad = value;
  return *this;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(impl_->shape, impl_->data, false);
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor out(impl_->shape, impl_->data, impl_->requires_grad && is_leaf());
  return out;
}

template <typename T>
Tensor<T> Tensor<T>::from_impl(std::shared_ptr<Impl> impl) {
  return Tensor(std::move(impl));
}

template <typename T>
ComputationRecord<T> record_of(const Tensor<T>& root) {
  using ImplPtr = std::shared_ptr<detail::TensorImpl<T>>;
  ComputationRecord<T> record;
  std::unordered_set<const detail::TensorImpl<T>*> visited;

  // Iterative post-order DFS; graphs from deep transformers overflow naive recursion.
  struct Frame {
    ImplPtr impl;
    std::size_t next_input;
  };
  std::vector<Frame> stack;
  stack.push_back({root.impl(), 0});
  visited.insert(root.impl().get());
  while (!stack.empty()) {
    Frame& top = stack.back();
    const auto& node = top.impl->node;
    if (node && top.next_input < node->inputs.size()) {
      ImplPtr child = node->inputs[top.next_input++];
      if (child->requires_grad && visited.insert(child.get()).second) stack.push_back({child, 0});
      continue;
    }
    record.tensors.push_back(top.impl);
    stack.pop_back();
  }
  return record;
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw AutodiffError("backward needs a scalar loss, got shape " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw AutodiffError("backward on a loss that does not depend on any tensor requiring grad");
  }
  ComputationRecord<T> record = record_of(loss);
  for (auto& impl : record.tensors) {
    if (impl->node) impl->grad.clear();
  }
  loss.impl()->grad_buffer()[0] += T(1);
  for (auto it = record.tensors.rbegin(); it != record.tensors.rend(); ++it) {
    const auto& impl = *it;
    if (!impl->node || impl->grad.empty()) continue;
    impl->node->backward(*impl, impl->node->inputs);
  }
}

template class Tensor<float>;
template class Tensor<double>;
template ComputationRecord<float> record_of(const Tensor<float>&);
template ComputationRecord<double> record_of(const Tensor<double>&);
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);

}  // namespace depthmae
