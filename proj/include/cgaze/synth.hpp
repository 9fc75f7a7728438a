// Copyright (C) 2026 The cgaze Authors
// SPDX-License-Identifier: Apache-2.0

// Procedural grayscale eye images with exact gaze labels.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cgaze/dataset.hpp"

namespace cgaze {

struct SubjectParams {
  std::string id;
  float iris_radius = 18.0f;  // px at the configured resolution
  float eye_open = 0.65f;     // sclera half-height / half-width
  float gain_x = 40.0f;       // iris px per radian of yaw
  float gain_y = 30.0f;       // iris px per radian of pitch
  float offset_x = 0.0f;      // px
  float offset_y = 0.0f;
  float skin = 0.55f;
  float iris_tone = 0.35f;
  float glare_prob = 0.1f;
  float blink_prob = 0.05f;
  // Gaze labels: with probability `bias_weight` drawn around the subject's
  // preferred direction, otherwise uniform over the label range.
  float bias_pitch = 0.0f;
  float bias_yaw = 0.0f;
  float bias_spread = 0.12f;
  float bias_weight = 0.5f;
  // Never trained on: five personal shots, the rest test.
  bool heldout = false;

  void validate() const;
};

struct SyntheticEyeConfig {
  int resolution = 128;
  float noise_std = 0.02f;
  float max_pitch = 0.35f;
  float max_yaw = 0.5f;
  uint64_t seed = 0;
  std::vector<SubjectParams> subjects;

  void validate() const;
};

/// `n` subjects with varied geometry, drawn from the seed.
std::vector<SubjectParams> random_subjects(int n, uint64_t seed, int resolution = 128);

/// A subject outside the random population: shifted eye geometry, a gaze
/// distribution pulled off center and a darker, larger iris on darker skin.
SubjectParams heldout_subject(const std::string& id, uint64_t seed, int resolution = 128);

struct SynthRender {
  Tensor image;  // (1, R, R), already quantized to multiples of 1/255
  float iris_x = 0.0f, iris_y = 0.0f;
  bool blink = false, glare = false;
};

/// Renders one eye. Deterministic in (subject, gaze, seed).
SynthRender render_eye(const SyntheticEyeConfig& cfg, const SubjectParams& subject, float pitch, float yaw,
                       uint64_t seed);

/// n_per_subject samples per configured subject, split 8:1:1 by hash; the
/// first five test samples of every subject become its personal split.
GazeDataset synth_dataset(const SyntheticEyeConfig& cfg, int n_per_subject);

/// Writes PGM images plus manifest.jsonl under `out_dir`; returns the same
/// dataset that load_dataset will read back.
GazeDataset synth_generate(const SyntheticEyeConfig& cfg, int n_per_subject, const std::filesystem::path& out_dir);

}  // namespace cgaze
