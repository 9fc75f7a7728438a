// Copyright (C) 2026 The cgaze Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cgaze/tensor.hpp"

namespace cgaze {

/// A named learnable tensor. Buffers (batch-norm running statistics) are
/// registered as parameters too, so they persist with the weights, but never
/// receive gradients.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;  // empty until a backward pass populates it
  bool trainable = true;
  bool buffer = false;

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool is_buffer = false)
      : name(std::move(n)), value(std::move(v)), trainable(!is_buffer), buffer(is_buffer) {}

  int64_t count() const { return static_cast<int64_t>(value.size()); }
  void zero_grad() { grad = Tensor(); }
};

using ParamRefs = std::vector<Parameter*>;
using ConstParamRefs = std::vector<const Parameter*>;

/// FNV-1a over names, shapes and raw bytes; used to assert freeze contracts.
uint64_t hash_params(const ConstParamRefs& params);

/// Keep only parameters whose name satisfies `pred`.
ConstParamRefs filter_params(const ConstParamRefs& params,
                             const std::function<bool(const std::string&)>& pred);

}  // namespace cgaze
