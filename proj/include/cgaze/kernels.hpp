// Copyright (C) 2026 The cgaze Authors
// SPDX-License-Identifier: Apache-2.0

// Forward and gradient kernels. Every function here is a pure function of its
// inputs; backward kernels take nullptr for gradients the caller does not need.

#pragma once

#include <vector>

#include "cgaze/tensor.hpp"

namespace cgaze::kernels {

inline constexpr float kLayerNormEps = 1e-6f;
inline constexpr float kBatchNormEps = 1e-5f;
inline constexpr float kBatchNormMomentum = 0.1f;
inline constexpr float kGrnEps = 1e-6f;
inline constexpr float kLeakySlope = 0.01f;

struct ConvParams {
  int stride = 1;
  int pad = 0;
  int groups = 1;
};

/// "same" padding for stride-1 kernels, none for stride == kernel patchify.
ConvParams conv_params_for(int kernel, int stride, int groups = 1);

/// x: (N, C_in, H, W); weight: (C_out, C_in/groups, k, k); bias: (C_out) or null.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor* bias, ConvParams p);
void conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& dy, ConvParams p,
                     Tensor* dx, Tensor* dweight, Tensor* dbias);

/// Affine map over the last dimension; weight is (out, in).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor* bias);
void linear_backward(const Tensor& x, const Tensor& weight, const Tensor& dy, Tensor* dx,
                     Tensor* dweight, Tensor* dbias);

enum class NormAxis { Channel, Last };

struct NormCache {
  Tensor xhat;
  std::vector<float> rstd;
};

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, NormAxis axis,
                  NormCache* cache);
void layer_norm_backward(const Tensor& dy, const Tensor& gamma, NormAxis axis,
                         const NormCache& cache, Tensor* dx, Tensor* dgamma, Tensor* dbeta);

/// Batch statistics (biased variance) over every axis except the channel axis 1.
struct BatchStats {
  std::vector<float> mean;
  std::vector<float> var;
  int64_t count = 0;
};

/// Training mode normalizes with batch statistics; eval mode with the running ones.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  const Tensor& running_mean, const Tensor& running_var, bool training,
                  NormCache* cache, BatchStats* stats);
void batch_norm_backward(const Tensor& dy, const Tensor& gamma, bool training,
                         const NormCache& cache, Tensor* dx, Tensor* dgamma, Tensor* dbeta);

/// Exponential running-stat update. Running variance uses the unbiased batch
/// variance, except for a single-element batch where the biased one (0) is used.
void update_running_stats(Tensor& running_mean, Tensor& running_var, const BatchStats& stats,
                          float momentum = kBatchNormMomentum);

Tensor gelu(const Tensor& x);
Tensor gelu_backward(const Tensor& x, const Tensor& dy);
Tensor leaky_relu(const Tensor& x, float slope = kLeakySlope);
Tensor leaky_relu_backward(const Tensor& x, const Tensor& dy, float slope = kLeakySlope);

struct GrnCache {
  std::vector<float> norms;  // (N, C) spatial L2 norms
  std::vector<float> denom;  // (N) mean norm + eps
};

/// Global response normalization on (N, C, H, W).
Tensor grn(const Tensor& x, const Tensor& gamma, const Tensor& beta, GrnCache* cache);
void grn_backward(const Tensor& x, const Tensor& gamma, const Tensor& dy, const GrnCache& cache,
                  Tensor* dx, Tensor* dgamma, Tensor* dbeta);

Tensor global_avg_pool(const Tensor& x);
Tensor global_avg_pool_backward(const Shape& x_shape, const Tensor& dy);

double l1_loss(const Tensor& pred, const Tensor& target);
Tensor l1_loss_grad(const Tensor& pred, const Tensor& target);

/// Number of pred elements selected by a mask broadcast against pred.
int64_t mask_count(const Shape& pred_shape, const Tensor& mask);
double masked_mse(const Tensor& pred, const Tensor& target, const Tensor& mask);
/// d(masked_mse)/d(pred); the gradient for target is its negation.
Tensor masked_mse_grad(const Tensor& pred, const Tensor& target, const Tensor& mask);

/// (N, p*p*C, h, w) -> (N, C, h*p, w*p); channel index is (py*p + px)*C + c.
Tensor patches_to_image(const Tensor& x, int patch, int channels);
Tensor image_to_patches(const Tensor& img, int patch);

}  // namespace cgaze::kernels
