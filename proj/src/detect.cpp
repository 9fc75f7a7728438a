// Copyright (C) 2026 The cgaze Authors
// SPDX-License-Identifier: Apache-2.0

#include "cgaze/detect.hpp"

#include <algorithm>
#include <cmath>

#include "cgaze/weights.hpp"
#include "json.hpp"

namespace cgaze {

namespace {

float sigmoid(float v) { return 1.0f / (1.0f + std::exp(-v)); }

}  // namespace

FeatureGrid::FeatureGrid(Tensor channels, int stride) : stride_(stride) {
  if (channels.ndim() == 4 && channels.dim(0) == 1) channels = channels.reshaped({channels.dim(1), channels.dim(2), channels.dim(3)});
  if (channels.ndim() != 3 || channels.dim(0) < 6)
    throw ConfigError("feature grid needs (5+C, H, W) channels with C >= 1, got " + to_string(channels.shape()));
  if (stride < 1) throw ConfigError("grid stride must be positive");
  classes_ = static_cast<int>(channels.dim(0)) - 5;
  height_ = static_cast<int>(channels.dim(1));
  width_ = static_cast<int>(channels.dim(2));
  for (float v : channels.values())
    if (std::isnan(v) || v == std::numeric_limits<float>::infinity())
      throw DataError("feature grid holds NaN or +inf");
  data_ = std::move(channels);
}

FeatureGrid read_grid(const std::filesystem::path& path, std::optional<int> stride) {
  const NamedTensors t = read_tensors(path);
  const Tensor* grid = nullptr;
  std::optional<int> stored;
  for (const auto& [name, v] : t) {
    if (name == "grid") grid = &v;
    if (name == "stride") stored = static_cast<int>(v[0]);
  }
  if (!grid) throw DataError(path.string() + ": no 'grid' tensor");
  if (!stride) stride = stored;
  if (!stride) throw ConfigError(path.string() + ": grid stride unknown (no 'stride' tensor, none given)");
  return FeatureGrid(*grid, *stride);
}

void write_grid(const std::filesystem::path& path, const FeatureGrid& grid) {
  write_tensors(path, {{"grid", grid.tensor()}, {"stride", Tensor({1}, {static_cast<float>(grid.stride())})}});
}

GazeCell gaze_to_cell(float x, float y, const FeatureGrid& grid) {
  GazeCell g;
  const float max_x = static_cast<float>(grid.width() * grid.stride());
  const float max_y = static_cast<float>(grid.height() * grid.stride());
  g.clamped = !(x >= 0 && x < max_x && y >= 0 && y < max_y);
  const auto cell_of = [&](float v, int n) {
    if (!std::isfinite(v)) return v > 0 ? n - 1 : 0;
    return static_cast<int>(std::clamp(std::floor(v / static_cast<float>(grid.stride())), 0.0f, static_cast<float>(n - 1)));
  };
  g.cell = {cell_of(y, grid.height()), cell_of(x, grid.width())};
  return g;
}

GridRegion region_cells(Cell center, int k, const FeatureGrid& grid) {
  if (k < 0) throw ConfigError("region radius k must be >= 0");
  if (!grid.contains(center)) throw ConfigError("region center outside the grid");
  GridRegion r{center, k, {}};
  for (int i = std::max(0, center.i - k); i <= std::min(grid.height() - 1, center.i + k); ++i)
    for (int j = std::max(0, center.j - k); j <= std::min(grid.width() - 1, center.j + k); ++j) r.cells.push_back({i, j});
  return r;
}

std::vector<DetectionBox> decode_cells(const FeatureGrid& grid, std::span<const Cell> cells, float score_threshold) {
  if (!(score_threshold > 0 && score_threshold < 1)) throw ConfigError("score threshold must lie in (0,1)");
  std::vector<DetectionBox> out;
  const int nc = grid.num_classes();
  std::vector<float> p(static_cast<size_t>(nc));
  for (const Cell c : cells) {
    const float obj = sigmoid(grid.objectness(c));
    if (obj == 0.0f) continue;
    float mx = -std::numeric_limits<float>::infinity();
    for (int k = 0; k < nc; ++k) mx = std::max(mx, grid.class_logit(k, c));
    if (!std::isfinite(mx)) continue;
    double z = 0.0;
    int best = 0;
    for (int k = 0; k < nc; ++k) {
      p[static_cast<size_t>(k)] = std::exp(grid.class_logit(k, c) - mx);
      z += p[static_cast<size_t>(k)];
      if (p[static_cast<size_t>(k)] > p[static_cast<size_t>(best)]) best = k;
    }
    const float score = obj * static_cast<float>(p[static_cast<size_t>(best)] / z);
    const float w = grid.w(c), h = grid.h(c);
    if (score < score_threshold || !(w > 0) || !(h > 0) || !std::isfinite(w) || !std::isfinite(h)) continue;
    const float s = static_cast<float>(grid.stride());
    out.push_back({(static_cast<float>(c.j) + sigmoid(grid.dx(c))) * s, (static_cast<float>(c.i) + sigmoid(grid.dy(c))) * s,
                   w, h, best, score, c});
  }
  return out;
}

std::vector<DetectionBox> decode_region(const FeatureGrid& grid, const GridRegion& region, float score_threshold) {
  return decode_cells(grid, region.cells, score_threshold);
}

std::vector<DetectionBox> decode_full(const FeatureGrid& grid, float score_threshold) {
  std::vector<Cell> all;
  all.reserve(static_cast<size_t>(grid.cell_count()));
  for (int i = 0; i < grid.height(); ++i)
    for (int j = 0; j < grid.width(); ++j) all.push_back({i, j});
  return decode_cells(grid, all, score_threshold);
}

float iou(const DetectionBox& a, const DetectionBox& b) {
  const float ix = std::min(a.x + a.w / 2, b.x + b.w / 2) - std::max(a.x - a.w / 2, b.x - b.w / 2);
  const float iy = std::min(a.y + a.h / 2, b.y + b.h / 2) - std::max(a.y - a.h / 2, b.y - b.h / 2);
  if (ix <= 0 || iy <= 0) return 0.0f;
  const float inter = ix * iy;
  return inter / (a.w * a.h + b.w * b.h - inter);
}

std::vector<DetectionBox> nms(std::vector<DetectionBox> boxes, float iou_threshold, int grid_width) {
  if (!(iou_threshold > 0 && iou_threshold <= 1)) throw ConfigError("IoU threshold must lie in (0,1]");
  const auto cell_rank = [grid_width](const DetectionBox& b) {
    return static_cast<int64_t>(b.source_cell.i) * grid_width + b.source_cell.j;
  };
  std::sort(boxes.begin(), boxes.end(), [&](const DetectionBox& a, const DetectionBox& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.class_id != b.class_id) return a.class_id < b.class_id;
    if (cell_rank(a) != cell_rank(b)) return cell_rank(a) < cell_rank(b);
    return std::tie(a.x, a.y, a.w, a.h) < std::tie(b.x, b.y, b.w, b.h);
  });
  std::vector<DetectionBox> keep;
  std::vector<bool> dead(boxes.size(), false);
  for (size_t a = 0; a < boxes.size(); ++a) {
    if (dead[a]) continue;
    keep.push_back(boxes[a]);
    for (size_t b = a + 1; b < boxes.size(); ++b)
      if (!dead[b] && boxes[b].class_id == boxes[a].class_id && iou(boxes[a], boxes[b]) > iou_threshold) dead[b] = true;
  }
  return keep;
}

Detection detect_at_gaze(const FeatureGrid& grid, float gaze_x, float gaze_y, int k, const DetectThresholds& t) {
  Detection d;
  d.cells_total = grid.cell_count();
  d.gaze = gaze_to_cell(gaze_x, gaze_y, grid);
  const GridRegion region = region_cells(d.gaze.cell, k, grid);
  d.cells_examined = static_cast<int64_t>(region.cells.size());
  d.boxes = nms(decode_region(grid, region, t.score), t.iou, grid.width());
  return d;
}

std::optional<DetectionBox> resolve_edit_region(const FeatureGrid& grid, float gaze_x, float gaze_y, int k,
                                                const DetectThresholds& t) {
  Detection d = detect_at_gaze(grid, gaze_x, gaze_y, k, t);
  if (d.boxes.empty()) return std::nullopt;
  return d.boxes.front();
}

std::string to_json_line(const DetectionBox& b) {
  nlohmann::ordered_json j;
  j["x"] = b.x;
  j["y"] = b.y;
  j["w"] = b.w;
  j["h"] = b.h;
  j["class_id"] = b.class_id;
  j["score"] = b.score;
  j["cell"] = {b.source_cell.i, b.source_cell.j};
  return j.dump();
}

}  // namespace cgaze
