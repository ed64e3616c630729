#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "camforge/nn/tensor.hpp"

namespace camforge::nn {

struct Node;

// Propagates the owning node's grad into its parents' grads.
using BackwardFn = std::function<void(Node&)>;

struct Node {
  Tensor value;
  Tensor grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;

  // Adds `g` into this node's grad, allocating it on first use.
  void accumulate(const Tensor& g);
  Tensor& grad_buffer();
};

// Shared handle to a node of the differentiation tape. Copies alias the
// same node; values are never modified by operations once produced.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  explicit operator bool() const { return defined(); }

  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }

  // Direct access for optimizers and checkpoint loading.
  Tensor& mutable_value() { return node_->value; }

  bool has_grad() const { return !node_->grad.empty(); }
  const Tensor& grad() const { return node_->grad; }
  Tensor& mutable_grad() { return node_->grad_buffer(); }
  void zero_grad();

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  friend Var make_result(Tensor, std::vector<Var>, BackwardFn);
  std::shared_ptr<Node> node_;
};

// Leaf that participates in differentiation.
inline Var parameter(Tensor value) { return Var(std::move(value), true); }
// Leaf that never receives gradients.
inline Var constant(Tensor value) { return Var(std::move(value), false); }

// Wraps an operation output. Parents and the backward closure are kept only
// if gradient recording is enabled and some input requires a gradient.
Var make_result(Tensor value, std::vector<Var> inputs, BackwardFn backward);

// Reverse-mode sweep from a scalar (single element) loss.
void backward(const Var& loss);

bool grad_enabled();

// Disables tape recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace camforge::nn
