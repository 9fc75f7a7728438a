// Copyright (C) 2026 The cgaze Authors
// SPDX-License-Identifier: Apache-2.0

// Masked-image distillation of a student from a frozen teacher.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "cgaze/model.hpp"
#include "cgaze/optim.hpp"

namespace cgaze {

inline constexpr float kFeatureLossWeight = 0.5f;

struct DistillConfig {
  float mask_ratio = 0.6f;
  int patch_size = 32;
  float lr = 1e-3f;
  int batch_size = 8;
  int epochs = 1;
  uint64_t seed = 0;
  AdamWConfig optim;
};

struct LossParts {
  double total = 0.0;
  double img = 0.0;
  double feat3 = 0.0;
  double feat4 = 0.0;
};

struct ReconstructionLoss {
  ag::Var total;
  LossParts parts;
};

/// Teacher stage-3/4 features of unmasked images, (N,C,h,w) each.
struct TeacherFeatures {
  Tensor f3, f4;
};

TeacherFeatures teacher_features(const GazeModel& teacher, const Tensor& images);

/// img + 0.5 * (feat3 + feat4), each term a masked mean over its own masked
/// positions. `images` are the unmasked originals; `f3s`/`f4s` come from the
/// student's masked forward.
ReconstructionLoss reconstruction_loss(const Tensor& images, const ag::Var& f3s, const ag::Var& f4s,
                                       const TeacherFeatures& teacher, const DistillDecoders& decoders,
                                       std::span<const MaskSpec> masks, ForwardCtx& ctx);

/// Teacher frozen; student stem, stage 1 and head frozen; everything else in
/// the student and all decoders trainable.
void prepare_distillation(GazeModel& teacher, GazeModel& student, DistillDecoders& decoders);

/// Asserts the freeze contract set up by prepare_distillation.
void check_distill_freeze(const GazeModel& teacher, const GazeModel& student);

/// One optimizer step on a batch. Teacher features are computed on the fly
/// unless supplied.
LossParts distill_step(const GazeModel& teacher, GazeModel& student, DistillDecoders& decoders,
                       const Tensor& images, std::span<const MaskSpec> masks, AdamW& optimizer,
                       float lr, const TeacherFeatures* cached = nullptr);

/// Per-image masks for global step `step`, reproducible from the seed.
std::vector<MaskSpec> step_masks(const DistillConfig& cfg, int64_t step, int n, int h, int w);

struct DistillState {
  GazeModel student;
  DistillDecoders decoders;
  AdamW optimizer;
  int64_t step = 0;
};

/// Student, decoders, optimizer moments and step counter in one DFTW file.
void save_checkpoint(const DistillState& state, const std::filesystem::path& path);
DistillState load_checkpoint(const std::filesystem::path& path, const AdamWConfig& optim = {});

struct DistillRunOptions {
  std::optional<std::filesystem::path> log_csv;
  std::optional<std::filesystem::path> checkpoint;  // written after every epoch
  int64_t max_steps = -1;                            // stop early (tests)
  std::function<void(int64_t, const LossParts&)> on_step;
};

/// Epoch loop over `images` (N,C,H,W); batch order and masks depend only on
/// (seed, epoch, step), so a run resumed from a checkpoint continues exactly.
/// Returns the loss of every step executed by this call.
std::vector<LossParts> distill_run(const DistillConfig& cfg, const GazeModel& teacher, DistillState& state,
                                   const Tensor& images, const DistillRunOptions& options = {});

}  // namespace cgaze
