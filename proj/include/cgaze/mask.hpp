// Copyright (C) 2026 The cgaze Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cgaze/tensor.hpp"

namespace cgaze {

/// Patch-level binary mask for one image; 1 marks a hidden patch.
struct MaskSpec {
  int patch_size = 32;
  int h_patches = 0;
  int w_patches = 0;
  float ratio = 0.0f;
  std::vector<uint8_t> grid;  // row-major h_patches x w_patches

  bool masked(int i, int j) const { return grid[static_cast<size_t>(i * w_patches + j)] != 0; }
  int64_t masked_count() const;
  static MaskSpec all_visible(int h_patches, int w_patches, int patch_size = 32);
};

/// round(ratio * h * w) patches drawn uniformly without replacement.
/// A ratio that rounds to zero patches yields an empty mask; losses reject it.
MaskSpec generate_mask(int h_patches, int w_patches, float ratio, uint64_t seed,
                       int patch_size = 32);

/// Nearest-neighbour projection of the patch grid onto a feature map of the
/// given stride: (1, 1, H/stride, W/stride). Stride 1 gives the pixel mask.
Tensor mask_to_stage(const MaskSpec& mask, int stage_stride, int image_h, int image_w);

/// Per-image stage masks stacked to (N, 1, H/stride, W/stride).
Tensor batch_stage_mask(std::span<const MaskSpec> masks, int stage_stride, int image_h,
                        int image_w);

}  // namespace cgaze
