// Copyright (C) 2026 The cgaze Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cgaze/tensor.hpp"

namespace cgaze {

enum class Split { Train, Val, Test, Personal };

std::string to_string(Split s);
Split parse_split(const std::string& s);

struct GazeSample {
  Tensor image;  // (1, H, W), values in [0, 1]
  float pitch = 0.0f;
  float yaw = 0.0f;
  std::string subject;
  Split split = Split::Train;
};

using GazeDataset = std::vector<GazeSample>;

/// Deterministic 8:1:1 assignment from a hash of (subject, index).
Split split_for(const std::string& subject, int64_t index);

/// (N, 1, H, W) batch of the selected samples.
Tensor stack_images(const GazeDataset& data, std::span<const int64_t> rows);
/// (N, 2) (pitch, yaw) labels of the selected samples.
Tensor stack_labels(const GazeDataset& data, std::span<const int64_t> rows);
std::vector<int64_t> all_rows(const GazeDataset& data);

GazeDataset filter_split(const GazeDataset& data, Split split);
GazeDataset filter_subject(const GazeDataset& data, const std::string& subject);

// Grayscale images. PGM is P5 with maxval <= 65535; PNG goes through libpng.
Tensor read_image(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Tensor& image);
void write_png(const std::filesystem::path& path, const Tensor& image);
/// 8-bit quantization used when writing images: round(clamp(v,0,1) * 255).
uint8_t quantize_u8(float v);

/// Bilinear resize of a (1, H, W) image with half-pixel centers.
Tensor resize_bilinear(const Tensor& image, int out_h, int out_w);

struct ManifestRecord {
  std::string image;  // relative to the manifest directory
  float pitch = 0.0f;
  float yaw = 0.0f;
  std::string subject;
  Split split = Split::Train;
};

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& manifest);
void write_manifest(const std::filesystem::path& manifest, const std::vector<ManifestRecord>& records);

struct LoadOptions {
  int resolution = 0;  // square resize target; 0 keeps the stored size
  std::optional<Split> split;
  std::optional<std::string> subject;
};

/// Errors: DataError naming the missing file or the malformed line number.
GazeDataset load_dataset(const std::filesystem::path& manifest, const LoadOptions& options = {});

}  // namespace cgaze
