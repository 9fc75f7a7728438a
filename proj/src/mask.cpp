// Copyright (C) 2026 The cgaze Authors
// SPDX-License-Identifier: Apache-2.0

#include "cgaze/mask.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace cgaze {

int64_t MaskSpec::masked_count() const {
  return std::count_if(grid.begin(), grid.end(), [](uint8_t v) { return v != 0; });
}

MaskSpec MaskSpec::all_visible(int h_patches, int w_patches, int patch_size) {
  MaskSpec m;
  m.patch_size = patch_size;
  m.h_patches = h_patches;
  m.w_patches = w_patches;
  m.grid.assign(static_cast<size_t>(h_patches * w_patches), 0);
  return m;
}

MaskSpec generate_mask(int h_patches, int w_patches, float ratio, uint64_t seed, int patch_size) {
  if (!(ratio > 0.0f && ratio < 1.0f))
    throw ConfigError("mask ratio must lie in (0,1), got " + std::to_string(ratio));
  if (h_patches < 1 || w_patches < 1 || patch_size < 1)
    throw ConfigError("mask grid must be non-empty");
  MaskSpec m = MaskSpec::all_visible(h_patches, w_patches, patch_size);
  m.ratio = ratio;
  const int total = h_patches * w_patches;
  const auto count = static_cast<int>(std::lround(static_cast<double>(ratio) * total));
  std::vector<int> order(static_cast<size_t>(total));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  for (int i = 0; i < count; ++i) m.grid[static_cast<size_t>(order[static_cast<size_t>(i)])] = 1;
  return m;
}

Tensor mask_to_stage(const MaskSpec& mask, int stage_stride, int image_h, int image_w) {
  if (stage_stride < 1 || mask.patch_size % stage_stride != 0)
    throw ConfigError("patch size " + std::to_string(mask.patch_size) +
                      " not divisible by stage stride " + std::to_string(stage_stride));
  if (image_h != mask.h_patches * mask.patch_size || image_w != mask.w_patches * mask.patch_size)
    throw ConfigError("image " + std::to_string(image_h) + "x" + std::to_string(image_w) +
                      " does not match a " + std::to_string(mask.h_patches) + "x" +
                      std::to_string(mask.w_patches) + " grid of " +
                      std::to_string(mask.patch_size) + "px patches");
  const int h = image_h / stage_stride, w = image_w / stage_stride;
  const int per = mask.patch_size / stage_stride;
  Tensor t({1, 1, h, w});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) t.at(0, 0, i, j) = mask.masked(i / per, j / per) ? 1.0f : 0.0f;
  return t;
}

Tensor batch_stage_mask(std::span<const MaskSpec> masks, int stage_stride, int image_h,
                        int image_w) {
  std::vector<Tensor> parts;
  parts.reserve(masks.size());
  for (const auto& m : masks) parts.push_back(mask_to_stage(m, stage_stride, image_h, image_w));
  return stack_batch(parts);
}

}  // namespace cgaze
