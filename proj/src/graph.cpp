#include "tnas/graph.hpp"

#include <stdexcept>
#include <string>

namespace tnas::nd {

bool Graph::needs_grad(std::initializer_list<const Tensor*> inputs) const {
  if (!recording()) return false;
  for (const Tensor* t : inputs) {
    if (t && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

bool Graph::needs_grad(const std::vector<Tensor>& inputs) const {
  if (!recording()) return false;
  for (const auto& t : inputs) {
    if (t.defined() && t.requires_grad()) return true;
  }
  return false;
}

void Graph::record(Tensor& output, BackwardFn fn) {
  if (!recording()) throw std::logic_error("record() on an inference-mode graph");
  if (consumed_) throw std::logic_error("record() on a graph that already ran backward");
  output.set_requires_grad(true);
  output.set_node_id(static_cast<int>(nodes_.size()));
  nodes_.push_back(Node{output, std::move(fn)});
}

void Graph::backward(Tensor& loss) {
  if (consumed_) {
    throw std::logic_error("backward() called twice on the same graph; build a new graph per step");
  }
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
  }
  consumed_ = true;
  if (!loss.requires_grad()) return;  // constant loss: nothing depends on any leaf

  loss.ensure_grad()[0] += 1.0;
  const int start = loss.node_id();
  if (start < 0) return;  // loss is itself a leaf
  if (start >= static_cast<int>(nodes_.size()) || !nodes_[static_cast<std::size_t>(start)].output.is_same(loss)) {
    throw std::invalid_argument("backward(): loss was not produced by this graph");
  }
  for (int i = start; i >= 0; --i) {
    auto& node = nodes_[static_cast<std::size_t>(i)];
    if (!node.output.has_grad()) continue;  // not on any path to the loss
    node.fn();
  }
}

}  // namespace tnas::nd
