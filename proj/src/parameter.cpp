// Copyright (C) 2026 The cgaze Authors
// SPDX-License-Identifier: Apache-2.0

#include "cgaze/parameter.hpp"

#include <cstring>

namespace cgaze {

namespace {
constexpr uint64_t kFnvOffset = 1469598103934665603ull;
constexpr uint64_t kFnvPrime = 1099511628211ull;

void mix(uint64_t& h, const void* bytes, size_t n) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
}
}  // namespace

uint64_t hash_params(const ConstParamRefs& params) {
  uint64_t h = kFnvOffset;
  for (const Parameter* p : params) {
    mix(h, p->name.data(), p->name.size());
    for (int64_t d : p->value.shape()) mix(h, &d, sizeof d);
    mix(h, p->value.data(), p->value.size() * sizeof(float));
  }
  return h;
}

ConstParamRefs filter_params(const ConstParamRefs& params,
                             const std::function<bool(const std::string&)>& pred) {
  ConstParamRefs out;
  for (const Parameter* p : params)
    if (pred(p->name)) out.push_back(p);
  return out;
}

}  // namespace cgaze
