// SPDX-License-Identifier: Apache-2.0
//
// Dense float64 tensors with a define-by-run gradient tape.
//
// Every operation in ops.hpp produces a new Tensor whose node keeps handles to
// its inputs plus a backward rule. Calling backward() on a scalar result
// orders the reachable nodes topologically (the tape) and runs each rule once
// in reverse. Leaf gradients accumulate across calls; gradients on
// intermediate nodes are reset at the start of every backward pass.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace miml::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;
using BackwardRule = std::function<void(Node& out)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something is accumulated
  bool requires_grad = false;
  std::vector<NodePtr> inputs;
  BackwardRule backward;
  const char* op = "leaf";
  std::uint64_t id = 0;

  bool is_leaf() const { return inputs.empty(); }
  /// Gradient buffer, allocated as zeros on first use.
  std::vector<double>& grad_buffer();
};

std::uint64_t next_node_id();

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const double> values() const { return node_->value; }
  double at(std::size_t flat_index) const { return node_->value.at(flat_index); }
  /// Value of a one-element tensor.
  double item() const;

  /// Writable values; only leaves may be mutated (optimizer updates, tests).
  std::span<double> mutable_values();

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Accumulated gradient; empty span if backward never reached this tensor.
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad();

  /// New leaf holding a copy of the values.
  Tensor detach(bool requires_grad = false) const;

  const char* op_name() const { return node_->op; }
  std::uint64_t id() const { return node_->id; }

  /// For operation implementations.
  const detail::NodePtr& node() const { return node_; }
  static Tensor from_node(detail::NodePtr node);

 private:
  detail::NodePtr node_;
};

/// Creates an operation result. `inputs` become the node's parents only when
/// at least one of them requires a gradient; otherwise the result is a plain
/// constant and `rule` is dropped.
Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs, const char* op,
                   detail::BackwardRule rule);

/// Nodes reachable from a root through requires_grad edges, in topological
/// order (inputs before the operations that consume them).
class Tape {
 public:
  static Tape record(const Tensor& root);

  std::size_t node_count() const { return order_.size(); }
  /// Number of recorded operations (non-leaf nodes).
  std::size_t op_count() const;
  bool is_topological() const;

  /// Seeds the root gradient and runs each backward rule once in reverse
  /// order. Returns the number of rules executed.
  std::size_t run_backward(std::span<const double> seed);

 private:
  std::vector<detail::NodePtr> order_;
};

/// Backpropagates from a one-element tensor with seed 1. Throws ContractError
/// for non-scalar roots.
void backward(const Tensor& loss);

/// Backpropagates from an arbitrary tensor with an explicit upstream gradient.
void backward(const Tensor& root, std::span<const double> seed);

}  // namespace miml::ad
