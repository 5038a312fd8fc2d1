#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace jamlab::nn {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

enum class Mode { Train, Eval };

template <typename T>
struct Node;

/// Backward rule of one graph node: reads node.grad and accumulates into the
/// grads of node.inputs (via Node::grad_buffer()).
template <typename T>
using BackwardFn = std::function<void(Node<T>&)>;

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::string_view op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn<T> backward;

  std::span<T> grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T{0});
    return grad;
  }
  bool is_leaf() const { return inputs.empty(); }
};

/// Dense row-major array with shared ownership and an optional gradient.
///
/// Copies share storage. Tensors produced by ops on inputs that require grad keep
/// a reference to those inputs together with the backward rule; everything else
/// carries no graph.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0});
  Tensor(Shape shape, std::vector<T> values);

  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }
  static Tensor from_node(std::shared_ptr<Node<T>> node);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> values() const { return node_->data; }
  /// Direct write access; only meaningful on leaves (parameters, buffers, inputs).
  std::span<T> mutable_values() { return node_->data; }
  T item() const;
  T operator[](std::size_t i) const { return node_->data[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  /// Same values, no graph, independent storage.
  Tensor detach() const;
  Tensor reshaped(Shape shape) const;  // alias of reshape() in ops.hpp without graph

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// While alive on a thread, ops on that thread record no graph (inference).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool active();

 private:
  bool previous_;
};

/// Builds an op output. The graph link (inputs + rule) is kept only when one of
/// the inputs requires grad.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::vector<Tensor<T>> inputs, std::string_view op,
                      BackwardFn<T> rule);

/// Reverse-mode sweep from a scalar. Gradients are accumulated (+=) into every
/// leaf that requires grad; intermediate grads are released as the sweep passes.
template <typename T>
void backward(const Tensor<T>& loss);

/// A trainable parameter or persistent buffer with its dotted path name.
template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
std::size_t count_scalars(std::span<const NamedTensor<T>> tensors) {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.tensor.numel();
  return n;
}

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace jamlab::nn
