#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cvnet/tensor.hpp"

namespace cvnet {

template <typename T>
class Node;

// Handle to a value in a reverse-mode differentiation graph.
template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
class Node {
 public:
  Node(Tensor<T> v, bool requires_grad, std::string op = "leaf")
      : value(std::move(v)), requires_grad(requires_grad), op(std::move(op)) {}

  Tensor<T> value;
  // Allocated lazily; same shape as value once present.
  Tensor<T> grad;
  bool requires_grad;
  std::string op;
  std::vector<Var<T>> inputs;
  // Reads this->grad and accumulates into the grads of `inputs`.
  std::function<void(Node&)> backward_fn;

  const Shape& shape() const { return value.shape; }
  bool is_leaf() const { return !backward_fn; }
  bool has_grad() const { return !grad.empty(); }

  Tensor<T>& ensure_grad() {
    if (grad.shape != value.shape || grad.data.size() != value.data.size()) {
      grad = Tensor<T>(value.shape, T{0});
    }
    return grad;
  }

  void zero_grad() {
    if (has_grad()) grad.fill(T{0});
  }
};

template <typename T>
Var<T> parameter(Tensor<T> value) {
  return std::make_shared<Node<T>>(std::move(value), true);
}

template <typename T>
Var<T> constant(Tensor<T> value) {
  return std::make_shared<Node<T>>(std::move(value), false, "const");
}

// Creates an op node. If no input requires a gradient the node is detached
// and `backward` is dropped so the inputs are not kept alive.
template <typename T>
Var<T> make_op(std::string name, Tensor<T> value, std::vector<Var<T>> inputs,
               std::function<void(Node<T>&)> backward) {
  bool needs = false;
  for (const auto& in : inputs) needs = needs || (in && in->requires_grad);
  auto node = std::make_shared<Node<T>>(std::move(value), needs, std::move(name));
  if (needs) {
    node->inputs = std::move(inputs);
    node->backward_fn = std::move(backward);
  }
  return node;
}

// Reverse-mode sweep from a scalar. Leaf gradients accumulate across calls;
// interior gradients are reset on every call.
template <typename T>
void backward(const Var<T>& loss);

template <typename T>
void zero_grad(std::span<const Var<T>> params) {
  for (const auto& p : params) p->zero_grad();
}

extern template void backward<float>(const Var<float>&);
extern template void backward<double>(const Var<double>&);

}  // namespace cvnet
