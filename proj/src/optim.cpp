// Copyright (C) 2026 The cgaze Authors
// SPDX-License-Identifier: Apache-2.0

#include "cgaze/optim.hpp"

#include <cmath>

namespace cgaze {

void AdamW::step(const ParamRefs& params, float lr) {
  for (const Parameter* p : params)
    if (p->trainable && !p->buffer && p->grad.empty())
      throw ConfigError("optimizer: trainable parameter '" + p->name + "' has no gradient");

  ++step_;
  const double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(step_));
  const float step_size = static_cast<float>(lr / bc1);
  const float inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
  const float decay = 1.0f - lr * cfg_.weight_decay;

  for (Parameter* p : params) {
    if (!p->trainable || p->buffer) continue;
    require_same_shape(p->value, p->grad, ("optimizer grad for " + p->name).c_str());
    auto& mo = moments_[p->name];
    if (mo.m.empty()) {
      mo.m = Tensor(p->value.shape());
      mo.v = Tensor(p->value.shape());
    }
    float* w = p->value.data();
    const float* g = p->grad.data();
    float* m = mo.m.data();
    float* v = mo.v.data();
    for (size_t i = 0; i < p->value.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0f - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0f - cfg_.beta2) * g[i] * g[i];
      const float denom = std::sqrt(v[i]) * inv_sqrt_bc2 + cfg_.eps;
      w[i] = w[i] * decay - step_size * m[i] / denom;
    }
  }
}

std::vector<std::pair<std::string, Tensor>> AdamW::state() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("optim.step", Tensor({1}, {static_cast<float>(step_)}));
  for (const auto& [name, mo] : moments_) {
    out.emplace_back("optim.m." + name, mo.m);
    out.emplace_back("optim.v." + name, mo.v);
  }
  return out;
}

void AdamW::load_state(const std::vector<std::pair<std::string, Tensor>>& tensors) {
  moments_.clear();
  step_ = 0;
  for (const auto& [name, t] : tensors) {
    if (name == "optim.step") {
      step_ = static_cast<int64_t>(t[0]);
    } else if (name.rfind("optim.m.", 0) == 0) {
      moments_[name.substr(8)].m = t;
    } else if (name.rfind("optim.v.", 0) == 0) {
      moments_[name.substr(8)].v = t;
    }
  }
}

}  // namespace cgaze
