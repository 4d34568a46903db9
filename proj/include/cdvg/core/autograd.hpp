#pragma once

// Reverse-mode automatic differentiation over Tensor values.
//
// Backward functions are themselves written with differentiable ops, so a
// gradient computed with create_graph=true can be differentiated again. This
// is what the discriminator's gradient penalty needs. Ops whose backward is
// only valid to first order are flagged and refuse create_graph.

#include <functional>
#include <memory>
#include <vector>

#include "cdvg/core/tensor.hpp"

namespace cdvg {

class Var;
using BackwardFn = std::function<std::vector<Var>(const Var& grad_output)>;

struct Node {
  Tensor value;
  Tensor grad;  // accumulated by backward() on leaves that require grad
  bool requires_grad = false;
  bool twice_differentiable = true;
  const char* op = "leaf";
  std::vector<Var> inputs;
  BackwardFn backward;
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  // Trainable leaf.
  static Var parameter(Tensor value) { return Var(std::move(value), true); }

  bool defined() const { return static_cast<bool>(node_); }
  explicit operator bool() const { return defined(); }

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t i) const { return node_->value.dim(i); }
  std::size_t numel() const { return node_->value.numel(); }
  float item() const { return node_->value.item(); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool is_leaf() const { return !node_->backward; }

  // Gradient accumulated by backward(); undefined until the first backward.
  const Tensor& grad() const { return node_->grad; }
  void zero_grad();

  // Same value, cut from the graph.
  Var detach() const { return Var(node_->value, false); }

  Node* node() const { return node_.get(); }

  static Var from_node(std::shared_ptr<Node> node) {
    Var v;
    v.node_ = std::move(node);
    return v;
  }

 private:
  std::shared_ptr<Node> node_;
};

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Wraps an op result. Records the backward closure only when gradients are
// enabled and at least one input requires grad.
Var make_result(Tensor value, std::vector<Var> inputs, BackwardFn backward, const char* op,
                bool twice_differentiable = true);

// d(output)/d(inputs). `output` must be a single-element tensor unless
// `grad_output` is supplied. With create_graph, the returned gradients carry
// their own graph and can be differentiated again.
std::vector<Var> grad(const Var& output, const std::vector<Var>& inputs,
                      bool create_graph = false, const Var& grad_output = {});

// Accumulates d(output)/d(leaf) into every reachable leaf's grad().
void backward(const Var& output);

}  // namespace cdvg
