// Copyright (C) 2026 The cgaze Authors
// SPDX-License-Identifier: Apache-2.0

// ConvNeXt-V2 style gaze networks: teacher/student construction, adapters,
// the gaze head and the distillation decoders.

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cgaze/autograd.hpp"
#include "cgaze/mask.hpp"
#include "cgaze/parameter.hpp"

namespace cgaze {

struct ModelConfig {
  int in_channels = 1;
  std::array<int, 4> stage_depths{2, 2, 6, 2};
  std::array<int, 4> stage_dims{40, 80, 160, 320};
  int patch_stride = 4;
  int head_outputs = 2;  // (pitch, yaw)
  bool adapters_enabled = false;
  int adapter_ratio = 4;

  /// ConvNeXt V2-Atto layout.
  static ModelConfig teacher();
  /// Teacher layout with stages 2-4 at one fourth of the teacher width.
  static ModelConfig student();

  /// Cumulative stride of stage `s` (0-based): 4, 8, 16, 32.
  int stage_stride(int s) const { return patch_stride << s; }
  int total_stride() const { return stage_stride(3); }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct Conv {
  Parameter weight;  // (out, in/groups, k, k)
  Parameter bias;
  kernels::ConvParams params;
};

struct Norm {
  Parameter weight;
  Parameter bias;
};

/// FC_down -> BatchNorm -> LeakyReLU -> FC_up over the channel axis.
struct AdapterModule {
  Conv fc_down;
  Parameter bn_weight, bn_bias, bn_mean, bn_var;
  Conv fc_up;
};

struct ConvNeXtBlock {
  int dim = 0;
  Conv dwconv;
  Norm norm;
  Conv pw_expand;
  Parameter grn_gamma, grn_beta;
  Conv pw_project;
  std::optional<AdapterModule> adapter;
};

struct Downsample {
  Norm norm;
  Conv conv;
};

struct GazeHead {
  Norm norm;
  Parameter fc_weight;  // (outputs, dim)
  Parameter fc_bias;
};

struct GazeModel {
  ModelConfig config;
  Conv stem;
  Norm stem_norm;
  std::array<std::optional<Downsample>, 4> downsample;  // entry 0 unused
  std::array<std::vector<ConvNeXtBlock>, 4> stages;
  GazeHead head;

  ParamRefs params();
  ConstParamRefs params() const;
  bool has_adapters() const;
};

/// Decoder that maps a student stage feature to the teacher width:
/// FC(z + Conv1x1(GRN(GELU(Conv1x1(LN(DConv7x7(z))))))).
struct DecoderPsi {
  int in_dim = 0;
  int out_dim = 0;
  Conv dwconv;
  Norm norm;
  Conv pw_expand;
  Parameter grn_gamma, grn_beta;
  Conv pw_project;
  Conv fc;
};

/// One ConvNeXt block over stage-4 features, then a per-position projection
/// to patch pixels that is reassembled into an image.
struct ImageDecoder {
  int patch = 32;
  int channels = 1;
  ConvNeXtBlock block;
  Conv proj;
};

struct DistillDecoders {
  ImageDecoder image;
  DecoderPsi psi3;
  DecoderPsi psi4;

  ParamRefs params();
  ConstParamRefs params() const;
};

/// Running-statistic update produced by a training-mode batch norm.
struct BnUpdate {
  const Parameter* mean;
  const Parameter* var;
  kernels::BatchStats stats;
};

struct ForwardCtx {
  ag::Tape& tape;
  bool training = false;
  std::vector<BnUpdate>* bn_updates = nullptr;
  /// Run every batch norm on its running statistics even while training.
  bool freeze_bn_stats = false;
};

struct StageFeatures {
  std::array<ag::Var, 4> f;
  /// Per-stage (N,1,h,w) masks when the forward pass was masked.
  std::optional<std::array<Tensor, 4>> masks;
};

GazeModel build_model(const ModelConfig& config, uint64_t seed);
GazeModel build_teacher(uint64_t seed);
/// Student whose stem and stage 1 are bit copies of the teacher's.
GazeModel build_student_from_teacher(const GazeModel& teacher, uint64_t seed);
/// One adapter per block; adapter params trainable, everything else frozen.
void attach_adapters(GazeModel& model, uint64_t seed);

DistillDecoders build_decoders(const ModelConfig& student, const ModelConfig& teacher,
                               uint64_t seed);

/// Per-stage features. With masks (one per image) hidden patches are zeroed at
/// the input and the masks are projected to every stage.
StageFeatures forward_features(const GazeModel& model, const ag::Var& images,
                               std::span<const MaskSpec> masks, ForwardCtx& ctx);
ag::Var forward_gaze(const GazeModel& model, const ag::Var& images, ForwardCtx& ctx);
/// Eval-mode prediction, (N, 2) radians.
Tensor predict_gaze(const GazeModel& model, const Tensor& images);

ag::Var decode_psi(const DecoderPsi& decoder, const ag::Var& f_student, ForwardCtx& ctx);
ag::Var decode_image(const ImageDecoder& decoder, const ag::Var& f4, ForwardCtx& ctx);
ag::Var block_forward(const ConvNeXtBlock& block, const ag::Var& x, ForwardCtx& ctx);

/// Writes running statistics collected during a training forward into `params`.
void apply_bn_updates(const ParamRefs& params, const std::vector<BnUpdate>& updates);

int64_t count_params(const ConstParamRefs& params, bool trainable_only);
int64_t count_params(const GazeModel& model, bool trainable_only);

/// trainable = pred(name) for every parameter, buffers included.
void set_trainable(const ParamRefs& params, const std::function<bool(const std::string&)>& pred);

bool is_adapter_param(const std::string& name);
/// Stem and stage-1 parameters, the part a student inherits from its teacher.
bool is_stage1_param(const std::string& name);
bool is_head_param(const std::string& name);
/// Stage index (0-3) encoded in a block parameter name, or -1.
int stage_of(const std::string& name);

/// Recovers a ModelConfig from parameter names and shapes of a weight set.
ModelConfig infer_config(std::span<const std::pair<std::string, Shape>> entries);

}  // namespace cgaze
