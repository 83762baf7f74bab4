#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "scnn/tensor.hpp"

SCNN_NAMESPACE_BEGIN

/// Handle to a node in a Graph. Only meaningful for the graph that issued it.
struct Var {
  std::size_t id = 0;
};

class Graph;

/// View handed to an op's backward function while the graph is being unwound.
class BackwardContext {
 public:
  BackwardContext(Graph& graph, std::size_t node) : graph_(graph), node_(node) {}

  std::span<const Real> upstream() const;
  const Tensor& output() const;
  const Tensor& input(std::size_t i) const;
  bool needs_grad(std::size_t i) const;
  /// Accumulation buffer for input i, zero-initialised on first access.
  std::span<Real> input_grad(std::size_t i);

 private:
  Graph& graph_;
  std::size_t node_;
};

using BackwardFn = std::function<void(BackwardContext&)>;

/// Tape of operation records in creation (= topological) order.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Graph-owned leaf. With requires_grad its gradient is readable via grad().
  Var input(Tensor value, bool requires_grad = false);
  /// Binds an external tensor without copying. If it requires grad, backward()
  /// accumulates into its gradient buffer.
  Var parameter(Tensor& tensor);
  /// Binds an external tensor read-only; it never receives gradients.
  Var reference(const Tensor& tensor);

  Var record(std::string_view op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const;
  /// Gradient reached during backward(); empty if none flowed into v.
  std::span<const Real> grad(Var v) const;
  bool needs_grad(Var v) const;
  std::string_view op_name(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  /// Propagates d(loss)/d(node) to every node that needs it, visiting each
  /// once in reverse creation order. May be called once per graph.
  void backward(Var loss);

 private:
  friend class BackwardContext;

  struct Node {
    std::string op;
    Tensor value;
    const Tensor* external = nullptr;
    Tensor* sink = nullptr;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    std::vector<Real> grad;
    bool needs_grad = false;
  };

  Node& node(Var v);
  const Node& node(Var v) const;
  const Tensor& value_of(const Node& n) const { return n.external ? *n.external : n.value; }
  std::span<Real> grad_buffer(std::size_t id);

  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

SCNN_NAMESPACE_END
