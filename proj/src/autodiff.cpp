#include "cvnet/autodiff.hpp"

#include <unordered_set>

#include "cvnet/error.hpp"

namespace cvnet {

template <typename T>
void backward(const Var<T>& loss) {
  if (!loss) throw ShapeError("backward: null loss");
  if (loss->value.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + to_string(loss->shape()));
  }
  if (!loss->requires_grad) return;

  // Iterative post-order DFS gives a topological order with each node once.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(loss.get(), 0);
  visited.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child && child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* node : order) {
    if (!node->is_leaf()) {
      node->ensure_grad();
      node->grad.fill(T{0});
    }
  }
  loss->ensure_grad();
  loss->grad[0] += T{1};

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (!node->is_leaf()) node->backward_fn(*node);
  }
}

template void backward<float>(const Var<float>&);
template void backward<double>(const Var<double>&);

}  // namespace cvnet
