// Copyright (C) 2026 The cgaze Authors
// SPDX-License-Identifier: Apache-2.0

#include "cgaze/autograd.hpp"

#include <unordered_set>

namespace cgaze::ag {

namespace k = cgaze::kernels;

void Node::accumulate(const Tensor& g) {
  if (grad.empty()) {
    grad = g;
    return;
  }
  require_same_shape(grad, g, "gradient accumulation");
  for (size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
}

void Node::accumulate(Tensor&& g) {
  if (grad.empty()) {
    grad = std::move(g);
    return;
  }
  accumulate(static_cast<const Tensor&>(g));
}

Var constant(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  return n;
}

Var variable(Tensor t) {
  auto n = constant(std::move(t));
  n->requires_grad = true;
  return n;
}

Var Tape::param(const Parameter& p) {
  auto it = leaves_.find(&p);
  if (it != leaves_.end()) return it->second;
  auto n = std::make_shared<Node>();
  n->param = &p;
  n->requires_grad = grad_enabled_ && p.trainable && !p.buffer;
  leaves_.emplace(&p, n);
  return n;
}

const Tensor* Tape::grad_of(const Parameter& p) const {
  auto it = leaves_.find(&p);
  if (it == leaves_.end() || it->second->grad.empty()) return nullptr;
  return &it->second->grad;
}

void Tape::write_grads(const ParamRefs& params) const {
  for (Parameter* p : params) {
    if (const Tensor* g = grad_of(*p)) p->grad = *g;
  }
}

void backward(const Var& root) {
  if (root->val().size() != 1)
    throw ConfigError("backward() needs a scalar root, got " + to_string(root->shape()));
  if (!root->requires_grad) return;

  // Iterative post-order DFS; reversed it is a valid reverse-topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p && p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad = Tensor(root->shape(), 1.0f);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward || n->grad.empty()) continue;
    n->backward(*n);
    n->grad = Tensor();  // interior gradients are not needed afterwards
  }
}

namespace {

bool needs(const Var& v) { return v && v->requires_grad; }

Var make(Tensor value, std::vector<Var> parents, std::function<void(Node&)> bw) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  bool rg = false;
  for (const auto& p : parents) rg = rg || needs(p);
  if (rg) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward = std::move(bw);
  }
  return n;
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a->val(), b->val(), "add");
  Tensor y = a->val();
  const Tensor& bv = b->val();
  for (size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return make(std::move(y), {a, b}, [a, b](Node& self) {
    if (needs(a)) a->accumulate(self.grad);
    if (needs(b)) b->accumulate(self.grad);
  });
}

Var scale(const Var& a, float s) {
  Tensor y = a->val();
  for (float& v : y.values()) v *= s;
  return make(std::move(y), {a}, [a, s](Node& self) {
    Tensor g = self.grad;
    for (float& v : g.values()) v *= s;
    a->accumulate(std::move(g));
  });
}

Var mul_const(const Var& a, const Tensor& c) {
  require_same_shape(a->val(), c, "mul_const");
  Tensor y = a->val();
  for (size_t i = 0; i < y.size(); ++i) y[i] *= c[i];
  return make(std::move(y), {a}, [a, c](Node& self) {
    Tensor g = self.grad;
    for (size_t i = 0; i < g.size(); ++i) g[i] *= c[i];
    a->accumulate(std::move(g));
  });
}

Var conv2d(const Var& x, const Var& w, const Var& b, k::ConvParams p) {
  Tensor y = k::conv2d(x->val(), w->val(), b ? &b->val() : nullptr, p);
  return make(std::move(y), {x, w, b}, [x, w, b, p](Node& self) {
    Tensor dx, dw, db;
    k::conv2d_backward(x->val(), w->val(), self.grad, p, needs(x) ? &dx : nullptr,
                       needs(w) ? &dw : nullptr, needs(b) ? &db : nullptr);
    if (needs(x)) x->accumulate(std::move(dx));
    if (needs(w)) w->accumulate(std::move(dw));
    if (needs(b)) b->accumulate(std::move(db));
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  Tensor y = k::linear(x->val(), w->val(), b ? &b->val() : nullptr);
  return make(std::move(y), {x, w, b}, [x, w, b](Node& self) {
    Tensor dx, dw, db;
    k::linear_backward(x->val(), w->val(), self.grad, needs(x) ? &dx : nullptr,
                       needs(w) ? &dw : nullptr, needs(b) ? &db : nullptr);
    if (needs(x)) x->accumulate(std::move(dx));
    if (needs(w)) w->accumulate(std::move(dw));
    if (needs(b)) b->accumulate(std::move(db));
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, k::NormAxis axis) {
  auto cache = std::make_shared<k::NormCache>();
  const bool track = needs(x) || needs(gamma) || needs(beta);
  Tensor y = k::layer_norm(x->val(), gamma->val(), beta->val(), axis, track ? cache.get() : nullptr);
  return make(std::move(y), {x, gamma, beta}, [x, gamma, beta, axis, cache](Node& self) {
    Tensor dx, dg, db;
    k::layer_norm_backward(self.grad, gamma->val(), axis, *cache, needs(x) ? &dx : nullptr,
                           needs(gamma) ? &dg : nullptr, needs(beta) ? &db : nullptr);
    if (needs(x)) x->accumulate(std::move(dx));
    if (needs(gamma)) gamma->accumulate(std::move(dg));
    if (needs(beta)) beta->accumulate(std::move(db));
  });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, const Tensor& running_mean,
               const Tensor& running_var, bool training, k::BatchStats* stats) {
  auto cache = std::make_shared<k::NormCache>();
  const bool track = needs(x) || needs(gamma) || needs(beta);
  Tensor y = k::batch_norm(x->val(), gamma->val(), beta->val(), running_mean, running_var,
                           training, track ? cache.get() : nullptr, stats);
  return make(std::move(y), {x, gamma, beta}, [x, gamma, beta, training, cache](Node& self) {
    Tensor dx, dg, db;
    k::batch_norm_backward(self.grad, gamma->val(), training, *cache, needs(x) ? &dx : nullptr,
                           needs(gamma) ? &dg : nullptr, needs(beta) ? &db : nullptr);
    if (needs(x)) x->accumulate(std::move(dx));
    if (needs(gamma)) gamma->accumulate(std::move(dg));
    if (needs(beta)) beta->accumulate(std::move(db));
  });
}

Var gelu(const Var& x) {
  return make(k::gelu(x->val()), {x},
              [x](Node& self) { x->accumulate(k::gelu_backward(x->val(), self.grad)); });
}

Var leaky_relu(const Var& x, float slope) {
  return make(k::leaky_relu(x->val(), slope), {x}, [x, slope](Node& self) {
    x->accumulate(k::leaky_relu_backward(x->val(), self.grad, slope));
  });
}

Var grn(const Var& x, const Var& gamma, const Var& beta) {
  auto cache = std::make_shared<k::GrnCache>();
  Tensor y = k::grn(x->val(), gamma->val(), beta->val(), cache.get());
  return make(std::move(y), {x, gamma, beta}, [x, gamma, beta, cache](Node& self) {
    Tensor dx, dg, db;
    k::grn_backward(x->val(), gamma->val(), self.grad, *cache, needs(x) ? &dx : nullptr,
                    needs(gamma) ? &dg : nullptr, needs(beta) ? &db : nullptr);
    if (needs(x)) x->accumulate(std::move(dx));
    if (needs(gamma)) gamma->accumulate(std::move(dg));
    if (needs(beta)) beta->accumulate(std::move(db));
  });
}

Var global_avg_pool(const Var& x) {
  return make(k::global_avg_pool(x->val()), {x}, [x](Node& self) {
    x->accumulate(k::global_avg_pool_backward(x->shape(), self.grad));
  });
}

Var patches_to_image(const Var& x, int patch, int channels) {
  return make(k::patches_to_image(x->val(), patch, channels), {x}, [x, patch](Node& self) {
    x->accumulate(k::image_to_patches(self.grad, patch));
  });
}

Var l1_loss(const Var& pred, const Tensor& target) {
  const double v = k::l1_loss(pred->val(), target);
  return make(Tensor({1}, {static_cast<float>(v)}), {pred}, [pred, target](Node& self) {
    Tensor g = k::l1_loss_grad(pred->val(), target);
    const float s = self.grad[0];
    for (float& e : g.values()) e *= s;
    pred->accumulate(std::move(g));
  });
}

Var masked_mse(const Var& pred, const Var& target, const Tensor& mask) {
  const double v = k::masked_mse(pred->val(), target->val(), mask);
  return make(Tensor({1}, {static_cast<float>(v)}), {pred, target},
              [pred, target, mask](Node& self) {
                Tensor g = k::masked_mse_grad(pred->val(), target->val(), mask);
                const float s = self.grad[0];
                for (float& e : g.values()) e *= s;
                if (needs(target)) {
                  Tensor gt = g;
                  for (float& e : gt.values()) e = -e;
                  target->accumulate(std::move(gt));
                }
                if (needs(pred)) pred->accumulate(std::move(g));
              });
}

Var weighted_sum(const std::vector<std::pair<float, Var>>& terms) {
  double acc = 0.0;
  std::vector<Var> parents;
  for (const auto& [w, v] : terms) {
    if (v->val().size() != 1) throw ConfigError("weighted_sum expects scalar terms");
    acc += static_cast<double>(w) * v->val()[0];
    parents.push_back(v);
  }
  return make(Tensor({1}, {static_cast<float>(acc)}), parents, [terms](Node& self) {
    for (const auto& [w, v] : terms)
      if (needs(v)) v->accumulate(Tensor({1}, {w * self.grad[0]}));
  });
}

}  // namespace cgaze::ag
