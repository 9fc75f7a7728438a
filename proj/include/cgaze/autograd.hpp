// Copyright (C) 2026 The cgaze Authors
// SPDX-License-Identifier: Apache-2.0

// Minimal reverse-mode differentiation over the kernels in kernels.hpp.
//
// A Var is a node in a dynamically built graph. Nodes that do not require a
// gradient carry no parents and no backward closure, so inference through the
// same code path costs only the forward kernels.

#pragma once

#include <functional>
#include <memory>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cgaze/kernels.hpp"
#include "cgaze/parameter.hpp"

namespace cgaze::ag {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  const Parameter* param = nullptr;
  std::vector<Var> parents;
  std::function<void(Node&)> backward;

  const Tensor& val() const { return param ? param->value : value; }
  const Shape& shape() const { return val().shape(); }
  void accumulate(const Tensor& g);
  void accumulate(Tensor&& g);
};

Var constant(Tensor t);
/// Leaf that collects a gradient (used by tests and for input gradients).
Var variable(Tensor t);

/// Binds parameters to graph leaves for one forward/backward pass.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Var param(const Parameter& p);
  bool grad_enabled() const { return grad_enabled_; }

  /// Gradient accumulated for `p`, or nullptr when none flowed into it.
  const Tensor* grad_of(const Parameter& p) const;

  /// Copy accumulated gradients into the matching Parameter::grad fields.
  void write_grads(const ParamRefs& params) const;

 private:
  bool grad_enabled_;
  std::unordered_map<const Parameter*, Var> leaves_;
};

/// Seeds d(root)/d(root) = 1 and propagates to every reachable leaf.
void backward(const Var& root);

Var add(const Var& a, const Var& b);
Var scale(const Var& a, float s);
/// Elementwise product with a constant tensor of identical shape.
Var mul_const(const Var& a, const Tensor& c);

Var conv2d(const Var& x, const Var& w, const Var& b, kernels::ConvParams p);
Var linear(const Var& x, const Var& w, const Var& b);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, kernels::NormAxis axis);
/// Batch statistics of a training-mode call are written to `stats` when non-null.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, const Tensor& running_mean,
               const Tensor& running_var, bool training, kernels::BatchStats* stats);
Var gelu(const Var& x);
Var leaky_relu(const Var& x, float slope = kernels::kLeakySlope);
Var grn(const Var& x, const Var& gamma, const Var& beta);
Var global_avg_pool(const Var& x);
Var patches_to_image(const Var& x, int patch, int channels);

/// Scalar losses return shape (1) nodes.
Var l1_loss(const Var& pred, const Tensor& target);
Var masked_mse(const Var& pred, const Var& target, const Tensor& mask);
Var weighted_sum(const std::vector<std::pair<float, Var>>& terms);

}  // namespace cgaze::ag
