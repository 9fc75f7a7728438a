// Copyright (C) 2026 The cgaze Authors
// SPDX-License-Identifier: Apache-2.0

// Loop oracle for the masked reconstruction loss and small model fixtures
// for distillation tests.

#pragma once

#include <cstring>
#include <random>
#include <vector>

#include "cgaze/distill.hpp"

namespace oracle {

struct DistillFixture {
  cgaze::GazeModel teacher;
  cgaze::GazeModel student;
  cgaze::DistillDecoders decoders;
};

/// Narrow teacher/student pair with the real stage strides.
inline DistillFixture small_fixture(uint64_t seed) {
  cgaze::ModelConfig t;
  t.stage_depths = {1, 1, 1, 1};
  t.stage_dims = {8, 16, 32, 64};
  DistillFixture f{cgaze::build_model(t, seed), {}, {}};
  f.student = cgaze::build_student_from_teacher(f.teacher, seed + 1);
  f.decoders = cgaze::build_decoders(f.student.config, f.teacher.config, seed + 2);
  cgaze::prepare_distillation(f.teacher, f.student, f.decoders);
  return f;
}

inline cgaze::Tensor random_images(int n, int hw, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  cgaze::Tensor t({n, 1, hw, hw});
  for (float& v : t.values()) v = u(rng);
  return t;
}

/// Σ over hidden positions and channels of squared error / (hidden positions · C),
/// with the hidden flag read from the patch grid at the position's pixel origin.
inline double masked_term(const cgaze::Tensor& pred, const cgaze::Tensor& target,
                          const std::vector<cgaze::MaskSpec>& masks, int stride) {
  const int64_t N = pred.dim(0), C = pred.dim(1), H = pred.dim(2), W = pred.dim(3);
  double sum = 0.0;
  int64_t count = 0;
  for (int64_t n = 0; n < N; ++n) {
    const auto& m = masks[static_cast<size_t>(n)];
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) {
        if (!m.masked(static_cast<int>(y * stride / m.patch_size), static_cast<int>(x * stride / m.patch_size)))
          continue;
        for (int64_t c = 0; c < C; ++c) {
          const size_t k = static_cast<size_t>(((n * C + c) * H + y) * W + x);
          const double d = static_cast<double>(pred[k]) - target[k];
          sum += d * d;
          ++count;
        }
      }
  }
  return sum / static_cast<double>(count);
}

struct DecodedBatch {
  cgaze::Tensor image, psi3, psi4;  // decoder outputs
  cgaze::ag::Var f3, f4;            // student features fed to the loss
};

inline DecodedBatch decode_all(const DistillFixture& f, const cgaze::Tensor& images,
                               const std::vector<cgaze::MaskSpec>& masks, cgaze::ForwardCtx& ctx) {
  cgaze::StageFeatures sf = cgaze::forward_features(f.student, cgaze::ag::constant(images), masks, ctx);
  DecodedBatch d;
  d.f3 = sf.f[2];
  d.f4 = sf.f[3];
  d.image = cgaze::decode_image(f.decoders.image, d.f4, ctx)->value;
  d.psi3 = cgaze::decode_psi(f.decoders.psi3, d.f3, ctx)->value;
  d.psi4 = cgaze::decode_psi(f.decoders.psi4, d.f4, ctx)->value;
  return d;
}

inline double loop_loss(const DecodedBatch& d, const cgaze::Tensor& images, const cgaze::TeacherFeatures& t,
                        const std::vector<cgaze::MaskSpec>& masks) {
  const int s3 = static_cast<int>(images.dim(2) / d.psi3.dim(2));
  const int s4 = static_cast<int>(images.dim(2) / d.psi4.dim(2));
  return masked_term(d.image, images, masks, 1) +
         0.5 * (masked_term(d.psi3, t.f3, masks, s3) + masked_term(d.psi4, t.f4, masks, s4));
}

/// Bit snapshot of parameter values.
inline std::vector<std::vector<float>> snapshot(const cgaze::ConstParamRefs& ps) {
  std::vector<std::vector<float>> out;
  for (const auto* p : ps) out.emplace_back(p->value.values().begin(), p->value.values().end());
  return out;
}

inline bool bit_equal(const std::vector<std::vector<float>>& a, const std::vector<std::vector<float>>& b) {
  if (a.size() != b.size()) return false;
  for (size_t k = 0; k < a.size(); ++k)
    if (a[k].size() != b[k].size() || std::memcmp(a[k].data(), b[k].data(), a[k].size() * sizeof(float)) != 0)
      return false;
  return true;
}

}  // namespace oracle
