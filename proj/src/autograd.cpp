#include "cfhar/autograd.hpp"

#include <string>
#include <unordered_set>

namespace cfhar {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() noexcept { return g_grad_enabled; }

template <typename T>
T Var<T>::item() const {
  if (node_->value.size() != 1) {
    throw ConfigError("item() on tensor of shape " + shape_str(node_->value.shape()));
  }
  return node_->value[0];
}

template <typename T>
Var<T> make_result(Tensor<T> out, std::vector<Var<T>> parents, std::function<void(Node<T>&)> backward,
                   const char* op_name) {
  if (!out.all_finite()) throw NumericError(std::string("non-finite output from ") + op_name);
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(out);
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(parents.size());
      for (const auto& p : parents) node->parents.push_back(p.node());
      node->backward_fn = std::move(backward);
    }
  }
  return Var<T>(std::move(node));
}

template <typename T>
void backward(const Var<T>& root) {
  if (!root.defined() || root.size() != 1) throw ConfigError("backward() needs a scalar root");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS over nodes that need gradients.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node<T>* n : order) {
    if (n->backward_fn) n->grad = Tensor<T>();
  }
  root.node()->grad_buffer()[0] = T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && n->grad.size() == n->value.size()) n->backward_fn(*n);
  }
}

template class Var<float>;
template class Var<double>;
template Var<float> make_result(Tensor<float>, std::vector<Var<float>>, std::function<void(Node<float>&)>,
                                const char*);
template Var<double> make_result(Tensor<double>, std::vector<Var<double>>, std::function<void(Node<double>&)>,
                                 const char*);
template void backward(const Var<float>&);
template void backward(const Var<double>&);

}  // namespace cfhar
