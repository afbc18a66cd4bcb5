#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "svda/tensor.hpp"

namespace svda {

/// Handle to a node in a Graph. Only meaningful for the graph that issued it.
struct Var {
  std::size_t id = 0;
};

enum class PoolKind { avg, max };

/// Wengert-list autodiff tape. Nodes are appended in creation order, so the
/// node list is already topologically sorted. All forward activations are
/// kept until the graph is destroyed.
template <class T>
class Graph {
 public:
  using Buffer = std::vector<T>;

  /// What a node's backward rule sees. `grad_in[i]` is nullptr when input i
  /// does not need a gradient; rules must accumulate into it, not assign.
  struct BackwardCtx {
    std::span<const Tensor<T>* const> in;
    const Tensor<T>& out;
    const Buffer& grad_out;
    std::span<Buffer* const> grad_in;
  };
  using BackwardFn = std::function<void(const BackwardCtx&)>;

  struct Node {
    std::string op;
    std::vector<std::size_t> inputs;
    Tensor<T> value;
    BackwardFn backward;
    bool is_leaf = false;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  /// Leaf node; participates in backward iff `t.requires_grad`.
  Var leaf(Tensor<T> t);
  Var constant(Tensor<T> t);

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  const Node& node(Var v) const { return nodes_.at(v.id); }
  std::size_t size() const { return nodes_.size(); }
  bool requires_grad(Var v) const { return nodes_.at(v.id).value.requires_grad; }

  /// Gradient of the last backward() loss w.r.t. `v`. Throws if `v` did not
  /// require a gradient or backward() has not been run.
  const Buffer& grad(Var v) const;

  /// Populates gradients of `loss` (must be a single element). Previous
  /// gradients are discarded, never accumulated.
  void backward(Var loss);

  // ---- primitives -------------------------------------------------------

  /// Cross-correlation. x: N×C×H×W, w: O×C×k×k, b: O.
  Var conv2d(Var x, Var w, Var b, int stride, int pad);
  /// x: N×D, w: D×M, b: M.
  Var dense(Var x, Var w, Var b);
  Var relu(Var x);
  /// Windowed pooling over NCHW input; no padding.
  Var pool2d(Var x, PoolKind kind, int window, int stride);
  /// Mean over H×W, yielding N×C.
  Var global_avg_pool(Var x);
  Var reshape(Var x, Shape shape);
  Var scale(Var x, T factor);
  Var add(Var a, Var b);
  /// Elementwise product.
  Var mul(Var a, Var b);
  /// alpha·a + beta·b
  Var axpby(T alpha, Var a, T beta, Var b);
  Var sum(Var x);
  Var sum_squares(Var x);
  /// Mean negative log-likelihood of `labels` under softmax(logits).
  Var cross_entropy(Var logits, std::span<const int> labels);
  /// out[i] = x[index[i]], or 0 when index[i] < 0.
  Var gather(Var x, Shape out_shape, std::vector<std::ptrdiff_t> index);

  /// Escape hatch for ops defined outside the core (e.g. the SVD truncation).
  Var custom(std::string op, std::vector<Var> inputs, Tensor<T> value, BackwardFn backward);

 private:
  Var push(std::string op, std::vector<Var> inputs, Tensor<T> value, BackwardFn backward);

  std::vector<Node> nodes_;
  std::vector<Buffer> grads_;
  bool has_grads_ = false;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace svda
