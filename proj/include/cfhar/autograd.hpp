#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "cfhar/tensor.hpp"

namespace cfhar {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward_fn;

  Tensor<T>& grad_buffer() {
    if (grad.size() != value.size()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

/// Handle to a node of the reverse-mode tape. Copies share the node.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  bool has_grad() const noexcept { return node_ && node_->grad.size() == node_->value.size(); }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& grad_buffer() { return node_->grad_buffer(); }
  void zero_grad() {
    if (node_) node_->grad = Tensor<T>();
  }
  const std::shared_ptr<Node<T>>& node() const noexcept { return node_; }

  /// Scalar value of a one-element tensor.
  T item() const;

 private:
  std::shared_ptr<Node<T>> node_;
};

/// While alive on the current thread, ops record no backward closures.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled() noexcept;

/// Builds an op result node. Checks finiteness; records parents and the
/// backward closure only when gradients are enabled and some parent needs them.
template <typename T>
Var<T> make_result(Tensor<T> out, std::vector<Var<T>> parents, std::function<void(Node<T>&)> backward,
                   const char* op_name);

/// Seeds d(root)/d(root) = 1 and runs the tape in reverse topological order.
/// Gradients accumulate into leaves; call zero_grad between steps.
template <typename T>
void backward(const Var<T>& root);

}  // namespace cfhar
