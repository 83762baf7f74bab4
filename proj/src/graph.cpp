#include "scnn/graph.hpp"

#include <algorithm>
#include <stdexcept>

SCNN_NAMESPACE_BEGIN

std::span<const Real> BackwardContext::upstream() const { return graph_.nodes_[node_].grad; }

const Tensor& BackwardContext::output() const { return graph_.value_of(graph_.nodes_[node_]); }

const Tensor& BackwardContext::input(std::size_t i) const {
  return graph_.value_of(graph_.nodes_[graph_.nodes_[node_].inputs.at(i)]);
}

bool BackwardContext::needs_grad(std::size_t i) const {
  return graph_.nodes_[graph_.nodes_[node_].inputs.at(i)].needs_grad;
}

std::span<Real> BackwardContext::input_grad(std::size_t i) {
  return graph_.grad_buffer(graph_.nodes_[node_].inputs.at(i));
}

Var Graph::input(Tensor value, bool requires_grad) {
  Node n;
  n.op = "input";
  n.value = std::move(value);
  n.needs_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Graph::parameter(Tensor& tensor) {
  Node n;
  n.op = "parameter";
  n.external = &tensor;
  if (tensor.requires_grad()) {
    n.sink = &tensor;
    n.needs_grad = true;
  }
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Graph::reference(const Tensor& tensor) {
  Node n;
  n.op = "reference";
  n.external = &tensor;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Graph::record(std::string_view op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Node n;
  n.op = std::string(op);
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  for (Var v : inputs) {
    if (v.id >= nodes_.size()) throw std::out_of_range(n.op + ": input node " + std::to_string(v.id) + " not in graph");
    n.inputs.push_back(v.id);
    n.needs_grad = n.needs_grad || nodes_[v.id].needs_grad;
  }
  if (n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Graph::Node& Graph::node(Var v) {
  if (v.id >= nodes_.size()) throw std::out_of_range("node " + std::to_string(v.id) + " not in graph");
  return nodes_[v.id];
}

const Graph::Node& Graph::node(Var v) const {
  if (v.id >= nodes_.size()) throw std::out_of_range("node " + std::to_string(v.id) + " not in graph");
  return nodes_[v.id];
}

const Tensor& Graph::value(Var v) const { return value_of(node(v)); }

std::span<const Real> Graph::grad(Var v) const { return node(v).grad; }

bool Graph::needs_grad(Var v) const { return node(v).needs_grad; }

std::string_view Graph::op_name(Var v) const { return node(v).op; }

std::span<Real> Graph::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  const std::size_t count = value_of(n).size();
  if (n.grad.size() != count) n.grad.assign(count, Real(0));
  return n.grad;
}

void Graph::backward(Var loss) {
  if (backward_done_) throw std::logic_error("backward() already ran on this graph");
  Node& root = node(loss);
  if (value_of(root).size() != 1) {
    throw std::invalid_argument("backward() needs a scalar loss, got shape " + to_string(value_of(root).shape()));
  }
  backward_done_ = true;
  if (!root.needs_grad) return;
  grad_buffer(loss.id)[0] = Real(1);

  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.backward) {
      BackwardContext ctx(*this, id);
      n.backward(ctx);
    }
    if (n.sink) {
      auto dst = n.sink->ensure_grad();
      std::transform(dst.begin(), dst.end(), n.grad.begin(), dst.begin(), std::plus<>());
    }
  }
}

SCNN_NAMESPACE_END
