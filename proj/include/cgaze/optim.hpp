// Copyright (C) 2026 The cgaze Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cgaze/parameter.hpp"

namespace cgaze {

struct AdamWConfig {
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.05f;
};

/// AdamW with decoupled weight decay and bias-corrected moments.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  /// Updates every trainable, non-buffer parameter in place. Throws ConfigError
  /// naming the first trainable parameter without a gradient.
  void step(const ParamRefs& params, float lr);

  int64_t steps() const { return step_; }
  const AdamWConfig& config() const { return cfg_; }

  /// Moments and the step counter as named tensors, for checkpointing.
  std::vector<std::pair<std::string, Tensor>> state() const;
  void load_state(const std::vector<std::pair<std::string, Tensor>>& tensors);

 private:
  struct Moments {
    Tensor m, v;
  };
  AdamWConfig cfg_;
  int64_t step_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace cgaze
