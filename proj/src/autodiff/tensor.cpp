// SPDX-License-Identifier: Apache-2.0
#include "miml/autodiff/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <unordered_set>

#include "miml/core/errors.hpp"

namespace miml::ad {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace detail {

std::vector<double>& Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace detail

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_string(shape) + " does not match " + std::to_string(values.size()) +
                         " values");
  }
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
  node_->id = detail::next_node_id();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

std::span<double> Tensor::mutable_values() {
  if (!node_->is_leaf()) throw ContractError(std::string("cannot mutate result of operation ") + node_->op);
  return node_->value;
}

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detach(bool requires_grad) const { return Tensor(node_->shape, node_->value, requires_grad); }

Tensor Tensor::from_node(detail::NodePtr node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs, const char* op,
                   detail::BackwardRule rule) {
  Tensor out(std::move(shape), std::move(values), false);
  auto& node = *out.node();
  node.op = op;
  const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (any) {
    node.requires_grad = true;
    node.inputs.reserve(inputs.size());
    for (auto& t : inputs) node.inputs.push_back(t.node());
    node.backward = std::move(rule);
  }
  return out;
}

Tape Tape::record(const Tensor& root) {
  Tape tape;
  if (!root.defined() || !root.requires_grad()) return tape;
  // Iterative post-order DFS; inputs are emitted before their consumers.
  std::unordered_set<const detail::Node*> visited;
  std::vector<std::pair<detail::NodePtr, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      const auto& in = node->inputs[next++];
      if (in->requires_grad && visited.insert(in.get()).second) stack.emplace_back(in, 0);
    } else {
      tape.order_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

std::size_t Tape::op_count() const {
  return static_cast<std::size_t>(
      std::count_if(order_.begin(), order_.end(), [](const auto& n) { return !n->is_leaf(); }));
}

bool Tape::is_topological() const {
  std::unordered_set<const detail::Node*> seen;
  for (const auto& node : order_) {
    for (const auto& in : node->inputs) {
      if (in->requires_grad && !seen.contains(in.get())) return false;
    }
    seen.insert(node.get());
  }
  return true;
}

std::size_t Tape::run_backward(std::span<const double> seed) {
  if (order_.empty()) return 0;
  for (auto& node : order_) {
    if (!node->is_leaf()) node->grad.clear();
  }
  auto& root = *order_.back();
  if (seed.size() != root.value.size()) {
    throw DimensionError("backward seed has " + std::to_string(seed.size()) + " entries for tensor " +
                         shape_string(root.shape));
  }
  auto& g = root.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];

  std::size_t visited = 0;
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    auto& node = **it;
    if (node.is_leaf() || !node.backward) continue;
    node.grad_buffer();
    node.backward(node);
    ++visited;
  }
  return visited;
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_string(loss.shape()));
  }
  const double one = 1.0;
  Tape::record(loss).run_backward(std::span(&one, 1));
}

void backward(const Tensor& root, std::span<const double> seed) { Tape::record(root).run_backward(seed); }

}  // namespace miml::ad
