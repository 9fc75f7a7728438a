// Copyright (C) 2026 The cgaze Authors
// SPDX-License-Identifier: Apache-2.0

// Independent detection oracles: a quadratic NMS that repeatedly picks the
// best remaining box, and the full-grid pipeline filtered to the gaze region.

#pragma once

#include <cstdlib>
#include <limits>
#include <random>
#include <vector>

#include "cgaze/detect.hpp"

namespace oracle {

using cgaze::DetectionBox;

inline bool better(const DetectionBox& a, const DetectionBox& b, int width) {
  if (a.score != b.score) return a.score > b.score;
  if (a.class_id != b.class_id) return a.class_id < b.class_id;
  const long ca = static_cast<long>(a.source_cell.i) * width + a.source_cell.j;
  const long cb = static_cast<long>(b.source_cell.i) * width + b.source_cell.j;
  if (ca != cb) return ca < cb;
  if (a.x != b.x) return a.x < b.x;
  if (a.y != b.y) return a.y < b.y;
  if (a.w != b.w) return a.w < b.w;
  return a.h < b.h;
}

inline double overlap(const DetectionBox& a, const DetectionBox& b) {
  const double x0 = std::max(a.x - a.w / 2.0, b.x - b.w / 2.0), x1 = std::min(a.x + a.w / 2.0, b.x + b.w / 2.0);
  const double y0 = std::max(a.y - a.h / 2.0, b.y - b.h / 2.0), y1 = std::min(a.y + a.h / 2.0, b.y + b.h / 2.0);
  if (x1 <= x0 || y1 <= y0) return 0.0;
  const double inter = (x1 - x0) * (y1 - y0);
  return inter / (static_cast<double>(a.w) * a.h + static_cast<double>(b.w) * b.h - inter);
}

inline std::vector<DetectionBox> brute_nms(std::vector<DetectionBox> pool, float thr, int width) {
  std::vector<DetectionBox> out;
  while (!pool.empty()) {
    size_t best = 0;
    for (size_t k = 1; k < pool.size(); ++k)
      if (better(pool[k], pool[best], width)) best = k;
    const DetectionBox top = pool[best];
    out.push_back(top);
    std::vector<DetectionBox> rest;
    for (size_t k = 0; k < pool.size(); ++k) {
      if (k == best) continue;
      if (pool[k].class_id == top.class_id && cgaze::iou(top, pool[k]) > thr) continue;
      rest.push_back(pool[k]);
    }
    pool = std::move(rest);
  }
  return out;
}

/// Boxes on a coarse lattice so that score ties and heavy overlaps are common.
inline std::vector<DetectionBox> random_boxes(std::mt19937& rng, int n, bool coarse_scores) {
  std::vector<DetectionBox> boxes;
  std::uniform_int_distribution<int> pos(0, 12), size(2, 8), cls(0, 2), cell(0, 63);
  std::uniform_real_distribution<float> score(0.01f, 1.0f);
  for (int k = 0; k < n; ++k) {
    DetectionBox b;
    b.x = static_cast<float>(pos(rng)) * 2;
    b.y = static_cast<float>(pos(rng)) * 2;
    b.w = static_cast<float>(size(rng)) * 2;
    b.h = static_cast<float>(size(rng)) * 2;
    b.class_id = cls(rng);
    b.score = coarse_scores ? static_cast<float>(1 + rng() % 4) / 4.0f : score(rng);
    b.source_cell = {cell(rng), cell(rng)};
    boxes.push_back(b);
  }
  return boxes;
}

inline cgaze::FeatureGrid random_grid(std::mt19937& rng) {
  const int C = 1 + static_cast<int>(rng() % 4);
  const int H = 1 + static_cast<int>(rng() % 14), W = 1 + static_cast<int>(rng() % 14);
  const int stride = 4 << (rng() % 3);
  cgaze::Tensor t({5 + C, H, W});
  std::normal_distribution<float> n01(0.0f, 1.0f);
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) {
      auto at = [&](int ch) -> float& { return t[static_cast<size_t>((ch * H + i) * W + j)]; };
      at(0) = (rng() % 5 == 0) ? -std::numeric_limits<float>::infinity() : n01(rng) * 2.0f;
      for (int c = 0; c < C; ++c) at(1 + c) = n01(rng);
      at(1 + C) = n01(rng);
      at(2 + C) = n01(rng);
      at(3 + C) = static_cast<float>(stride) * (0.5f + 3.0f * std::abs(n01(rng)));
      at(4 + C) = static_cast<float>(stride) * (0.5f + 3.0f * std::abs(n01(rng)));
    }
  return cgaze::FeatureGrid(t, stride);
}

/// Decode every cell, keep boxes whose source cell lies within k of the gaze
/// cell, then suppress.
inline std::vector<DetectionBox> full_then_filter(const cgaze::FeatureGrid& g, float gx, float gy, int k,
                                                  const cgaze::DetectThresholds& th) {
  const int ci = std::clamp(static_cast<int>(std::floor(gy / static_cast<float>(g.stride()))), 0, g.height() - 1);
  const int cj = std::clamp(static_cast<int>(std::floor(gx / static_cast<float>(g.stride()))), 0, g.width() - 1);
  std::vector<DetectionBox> kept;
  for (const auto& b : cgaze::decode_full(g, th.score))
    if (std::abs(b.source_cell.i - ci) <= k && std::abs(b.source_cell.j - cj) <= k) kept.push_back(b);
  return brute_nms(kept, th.iou, g.width());
}

}  // namespace oracle
