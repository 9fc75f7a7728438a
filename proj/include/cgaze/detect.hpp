// Copyright (C) 2026 The cgaze Authors
// SPDX-License-Identifier: Apache-2.0

// Gaze-directed filtering of grid detections. A grid stores, per cell,
// channels [obj, cls_0 .. cls_{C-1}, dx, dy, w, h]: logits for objectness and
// classes, raw center offsets squashed by a sigmoid, and box size in pixels.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cgaze/tensor.hpp"

namespace cgaze {

struct Cell {
  int i = 0;  // row
  int j = 0;  // column
  bool operator==(const Cell&) const = default;
};

class FeatureGrid {
 public:
  /// `channels` is (5 + C, H, W) or (1, 5 + C, H, W).
  FeatureGrid(Tensor channels, int stride);

  int width() const { return width_; }
  int height() const { return height_; }
  int stride() const { return stride_; }
  int num_classes() const { return classes_; }
  int64_t cell_count() const { return static_cast<int64_t>(width_) * height_; }
  int64_t cell_index(Cell c) const { return static_cast<int64_t>(c.i) * width_ + c.j; }
  bool contains(Cell c) const { return c.i >= 0 && c.i < height_ && c.j >= 0 && c.j < width_; }

  float objectness(Cell c) const { return at(0, c); }
  float class_logit(int cls, Cell c) const { return at(1 + cls, c); }
  float dx(Cell c) const { return at(1 + classes_, c); }
  float dy(Cell c) const { return at(2 + classes_, c); }
  float w(Cell c) const { return at(3 + classes_, c); }
  float h(Cell c) const { return at(4 + classes_, c); }
  const Tensor& tensor() const { return data_; }

 private:
  float at(int ch, Cell c) const {
    return data_[static_cast<size_t>((static_cast<int64_t>(ch) * height_ + c.i) * width_ + c.j)];
  }
  Tensor data_;
  int width_ = 0, height_ = 0, stride_ = 1, classes_ = 0;
};

/// DFTW file holding "grid" (5 + C, H, W) and optionally "stride" (1).
FeatureGrid read_grid(const std::filesystem::path& path, std::optional<int> stride = std::nullopt);
void write_grid(const std::filesystem::path& path, const FeatureGrid& grid);

struct GazeCell {
  Cell cell;
  bool clamped = false;  // gaze fell outside the image
};

GazeCell gaze_to_cell(float x, float y, const FeatureGrid& grid);

struct GridRegion {
  Cell center;
  int k = 0;
  std::vector<Cell> cells;  // row-major
};

GridRegion region_cells(Cell center, int k, const FeatureGrid& grid);

struct DetectionBox {
  float x = 0, y = 0, w = 0, h = 0;  // center format, pixels
  int class_id = 0;
  float score = 0;
  Cell source_cell;
  bool operator==(const DetectionBox&) const = default;
};

/// One box per cell (best class, ties to the lower id); kept when
/// score >= threshold and the stored size is positive.
std::vector<DetectionBox> decode_cells(const FeatureGrid& grid, std::span<const Cell> cells, float score_threshold);
std::vector<DetectionBox> decode_region(const FeatureGrid& grid, const GridRegion& region, float score_threshold);
std::vector<DetectionBox> decode_full(const FeatureGrid& grid, float score_threshold);

float iou(const DetectionBox& a, const DetectionBox& b);

/// Greedy per-class suppression of IoU > threshold in descending score order;
/// ties broken by lower class id, then lower source cell. Output in that order.
std::vector<DetectionBox> nms(std::vector<DetectionBox> boxes, float iou_threshold, int grid_width = 1 << 20);

struct DetectThresholds {
  float score = 0.25f;
  float iou = 0.5f;
};

struct Detection {
  std::vector<DetectionBox> boxes;
  GazeCell gaze;
  int64_t cells_examined = 0;
  int64_t cells_total = 0;
};

Detection detect_at_gaze(const FeatureGrid& grid, float gaze_x, float gaze_y, int k, const DetectThresholds& t = {});

/// Top surviving box at the gaze point, the region handed to an editor.
std::optional<DetectionBox> resolve_edit_region(const FeatureGrid& grid, float gaze_x, float gaze_y, int k,
                                                const DetectThresholds& t = {});

/// {"x":..,"y":..,"w":..,"h":..,"class_id":..,"score":..,"cell":[i,j]}
std::string to_json_line(const DetectionBox& box);

}  // namespace cgaze
