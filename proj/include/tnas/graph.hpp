#pragma once

#include <functional>
#include <initializer_list>
#include <vector>

#include "tnas/tensor.hpp"

namespace tnas::nd {

/// Append-only tape of differentiable operations.
///
/// Nodes may only reference tensors produced earlier, so append order is a
/// topological order and backward is a single reverse sweep. A tape is built
/// for one step and discarded; running backward twice on it is an error.
class Graph {
 public:
  enum class Mode { kRecord, kInference };

  /// Called during the reverse sweep once the node output's gradient is final.
  using BackwardFn = std::function<void()>;

  explicit Graph(Mode mode = Mode::kRecord) : mode_(mode) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return mode_ == Mode::kRecord; }

  /// True when an op output depending on these inputs must be recorded.
  bool needs_grad(std::initializer_list<const Tensor*> inputs) const;
  bool needs_grad(const std::vector<Tensor>& inputs) const;

  /// Registers `output` as produced by an op; `fn` reads output.grad() and
  /// accumulates into the inputs that require gradients.
  void record(Tensor& output, BackwardFn fn);

  /// Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse.
  void backward(Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Node {
    Tensor output;
    BackwardFn fn;
  };

  Mode mode_;
  bool consumed_ = false;
  std::vector<Node> nodes_;
};

}  // namespace tnas::nd
