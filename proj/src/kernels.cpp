// Copyright (C) 2026 The cgaze Authors
// SPDX-License-Identifier: Apache-2.0

#include "cgaze/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cassert>
#include <cmath>

namespace cgaze::kernels {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using CMapVec = Eigen::Map<const Eigen::VectorXf>;

struct ConvDims {
  int64_t n, cin, h, w, cout, kh, kw, ho, wo, cin_g, cout_g;
};

ConvDims conv_dims(const Tensor& x, const Tensor& weight, ConvParams p) {
  if (x.ndim() != 4 || weight.ndim() != 4)
    throw ConfigError("conv2d expects 4-d input and weight, got " + to_string(x.shape()) +
                      " and " + to_string(weight.shape()));
  ConvDims d{};
  d.n = x.dim(0);
  d.cin = x.dim(1);
  d.h = x.dim(2);
  d.w = x.dim(3);
  d.cout = weight.dim(0);
  d.kh = weight.dim(2);
  d.kw = weight.dim(3);
  if (p.groups < 1 || d.cin % p.groups != 0 || d.cout % p.groups != 0 ||
      weight.dim(1) != d.cin / p.groups)
    throw ConfigError("conv2d shape mismatch: input " + to_string(x.shape()) + " vs weight " +
                      to_string(weight.shape()) + " with groups " + std::to_string(p.groups));
  if (p.stride < 1 || p.pad < 0) throw ConfigError("conv2d: bad stride/padding");
  d.ho = (d.h + 2 * p.pad - d.kh) / p.stride + 1;
  d.wo = (d.w + 2 * p.pad - d.kw) / p.stride + 1;
  if (d.ho <= 0 || d.wo <= 0)
    throw ConfigError("conv2d: kernel " + to_string(weight.shape()) + " larger than input " +
                      to_string(x.shape()));
  d.cin_g = d.cin / p.groups;
  d.cout_g = d.cout / p.groups;
  return d;
}

bool is_depthwise(const ConvDims& d, ConvParams p) {
  return p.groups == d.cin && d.cout == d.cin && p.stride == 1;
}

bool is_pointwise(const ConvDims& d, ConvParams p) {
  return d.kh == 1 && d.kw == 1 && p.stride == 1 && p.pad == 0;
}

// Columns for one sample and one group: rows (c, ky, kx), cols (oy, ox).
void im2col(const float* x, const ConvDims& d, ConvParams p, int64_t c0, float* col) {
  const int64_t cols = d.ho * d.wo;
  for (int64_t c = 0; c < d.cin_g; ++c) {
    const float* plane = x + (c0 + c) * d.h * d.w;
    for (int64_t ky = 0; ky < d.kh; ++ky) {
      for (int64_t kx = 0; kx < d.kw; ++kx) {
        float* row = col + ((c * d.kh + ky) * d.kw + kx) * cols;
        for (int64_t oy = 0; oy < d.ho; ++oy) {
          const int64_t iy = oy * p.stride + ky - p.pad;
          float* out = row + oy * d.wo;
          if (iy < 0 || iy >= d.h) {
            std::fill(out, out + d.wo, 0.0f);
            continue;
          }
          for (int64_t ox = 0; ox < d.wo; ++ox) {
            const int64_t ix = ox * p.stride + kx - p.pad;
            out[ox] = (ix >= 0 && ix < d.w) ? plane[iy * d.w + ix] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im(const float* col, const ConvDims& d, ConvParams p, int64_t c0, float* dx) {
  const int64_t cols = d.ho * d.wo;
  for (int64_t c = 0; c < d.cin_g; ++c) {
    float* plane = dx + (c0 + c) * d.h * d.w;
    for (int64_t ky = 0; ky < d.kh; ++ky) {
      for (int64_t kx = 0; kx < d.kw; ++kx) {
        const float* row = col + ((c * d.kh + ky) * d.kw + kx) * cols;
        for (int64_t oy = 0; oy < d.ho; ++oy) {
          const int64_t iy = oy * p.stride + ky - p.pad;
          if (iy < 0 || iy >= d.h) continue;
          for (int64_t ox = 0; ox < d.wo; ++ox) {
            const int64_t ix = ox * p.stride + kx - p.pad;
            if (ix >= 0 && ix < d.w) plane[iy * d.w + ix] += row[oy * d.wo + ox];
          }
        }
      }
    }
  }
}

// Valid output column range [lo, hi) for kernel column kx of a stride-1 conv.
inline void ox_range(const ConvDims& d, int64_t kx, int pad, int64_t& lo, int64_t& hi) {
  lo = std::max<int64_t>(0, pad - kx);
  hi = std::min<int64_t>(d.wo, d.w + pad - kx);
}

Tensor depthwise_forward(const Tensor& x, const Tensor& weight, const Tensor* bias,
                         const ConvDims& d, ConvParams p) {
  Tensor y({d.n, d.cout, d.ho, d.wo});
  const float* xp = x.data();
  const float* wp = weight.data();
  float* yp = y.data();
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < d.n; ++n) {
    for (int64_t c = 0; c < d.cin; ++c) {
      const float* in = xp + (n * d.cin + c) * d.h * d.w;
      float* out = yp + (n * d.cout + c) * d.ho * d.wo;
      const float b = bias ? (*bias)[static_cast<size_t>(c)] : 0.0f;
      std::fill(out, out + d.ho * d.wo, b);
      const float* k = wp + c * d.kh * d.kw;
      for (int64_t ky = 0; ky < d.kh; ++ky) {
        for (int64_t oy = 0; oy < d.ho; ++oy) {
          const int64_t iy = oy + ky - p.pad;
          if (iy < 0 || iy >= d.h) continue;
          const float* in_row = in + iy * d.w;
          float* out_row = out + oy * d.wo;
          for (int64_t kx = 0; kx < d.kw; ++kx) {
            int64_t lo, hi;
            ox_range(d, kx, p.pad, lo, hi);
            const float wv = k[ky * d.kw + kx];
            const float* src = in_row + kx - p.pad;
            for (int64_t ox = lo; ox < hi; ++ox) out_row[ox] += wv * src[ox];
          }
        }
      }
    }
  }
  return y;
}

void depthwise_backward(const Tensor& x, const Tensor& weight, const Tensor& dy,
                        const ConvDims& d, ConvParams p, Tensor* dx, Tensor* dw, Tensor* db) {
  const float* xp = x.data();
  const float* wp = weight.data();
  const float* gp = dy.data();
  if (dx) *dx = Tensor(x.shape());
  if (dw) *dw = Tensor(weight.shape());
  if (db) *db = Tensor({d.cout});
  // Channel-parallel with the batch loop inside keeps reductions in a fixed order.
#pragma omp parallel for schedule(static)
  for (int64_t c = 0; c < d.cin; ++c) {
    const float* k = wp + c * d.kh * d.kw;
    for (int64_t n = 0; n < d.n; ++n) {
      const float* in = xp + (n * d.cin + c) * d.h * d.w;
      const float* g = gp + (n * d.cout + c) * d.ho * d.wo;
      if (db) {
        float s = 0.0f;
        for (int64_t i = 0; i < d.ho * d.wo; ++i) s += g[i];
        (*db)[static_cast<size_t>(c)] += s;
      }
      float* gin = dx ? dx->data() + (n * d.cin + c) * d.h * d.w : nullptr;
      float* gk = dw ? dw->data() + c * d.kh * d.kw : nullptr;
      for (int64_t ky = 0; ky < d.kh; ++ky) {
        for (int64_t oy = 0; oy < d.ho; ++oy) {
          const int64_t iy = oy + ky - p.pad;
          if (iy < 0 || iy >= d.h) continue;
          const float* g_row = g + oy * d.wo;
          for (int64_t kx = 0; kx < d.kw; ++kx) {
            int64_t lo, hi;
            ox_range(d, kx, p.pad, lo, hi);
            const int64_t off = iy * d.w + kx - p.pad;
            if (gin) {
              const float wv = k[ky * d.kw + kx];
              float* dst = gin + off;
              for (int64_t ox = lo; ox < hi; ++ox) dst[ox] += wv * g_row[ox];
            }
            if (gk) {
              const float* src = in + off;
              float s = 0.0f;
              for (int64_t ox = lo; ox < hi; ++ox) s += g_row[ox] * src[ox];
              gk[ky * d.kw + kx] += s;
            }
          }
        }
      }
    }
  }
}

}  // namespace

ConvParams conv_params_for(int kernel, int stride, int groups) {
  ConvParams p;
  p.stride = stride;
  p.groups = groups;
  p.pad = (stride == 1) ? kernel / 2 : 0;
  return p;
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor* bias, ConvParams p) {
  const ConvDims d = conv_dims(x, weight, p);
  if (bias && (bias->ndim() != 1 || bias->dim(0) != d.cout))
    throw ConfigError("conv2d bias shape " + to_string(bias->shape()) + " vs weight " +
                      to_string(weight.shape()));
  if (is_depthwise(d, p)) return depthwise_forward(x, weight, bias, d, p);

  Tensor y({d.n, d.cout, d.ho, d.wo});
  const int64_t cols = d.ho * d.wo;
  const int64_t krows = d.cin_g * d.kh * d.kw;
  const bool pointwise = is_pointwise(d, p);
#pragma omp parallel
  {
    std::vector<float> col(pointwise ? 0 : static_cast<size_t>(krows * cols));
#pragma omp for schedule(static)
    for (int64_t n = 0; n < d.n; ++n) {
      for (int64_t g = 0; g < p.groups; ++g) {
        const float* src;
        if (pointwise) {
          src = x.data() + (n * d.cin + g * d.cin_g) * cols;
        } else {
          im2col(x.data() + n * d.cin * d.h * d.w, d, p, g * d.cin_g, col.data());
          src = col.data();
        }
        CMapMat xin(src, krows, cols);
        CMapMat wg(weight.data() + g * d.cout_g * krows, d.cout_g, krows);
        MapMat out(y.data() + (n * d.cout + g * d.cout_g) * cols, d.cout_g, cols);
        out.noalias() = wg * xin;
        if (bias) {
          CMapVec b(bias->data() + g * d.cout_g, d.cout_g);
          out.colwise() += b;
        }
      }
    }
  }
  return y;
}

void conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& dy, ConvParams p,
                     Tensor* dx, Tensor* dweight, Tensor* dbias) {
  const ConvDims d = conv_dims(x, weight, p);
  if (dy.shape() != Shape{d.n, d.cout, d.ho, d.wo})
    throw ConfigError("conv2d_backward: grad shape " + to_string(dy.shape()) +
                      " does not match output shape");
  if (is_depthwise(d, p)) {
    depthwise_backward(x, weight, dy, d, p, dx, dweight, dbias);
    return;
  }
  const int64_t cols = d.ho * d.wo;
  const int64_t krows = d.cin_g * d.kh * d.kw;
  const bool pointwise = is_pointwise(d, p);

  if (dbias) {
    *dbias = Tensor({d.cout});
    for (int64_t n = 0; n < d.n; ++n)
      for (int64_t c = 0; c < d.cout; ++c) {
        const float* g = dy.data() + (n * d.cout + c) * cols;
        float s = 0.0f;
        for (int64_t i = 0; i < cols; ++i) s += g[i];
        (*dbias)[static_cast<size_t>(c)] += s;
      }
  }

  if (dx) {
    *dx = Tensor(x.shape());
#pragma omp parallel
    {
      std::vector<float> col(pointwise ? 0 : static_cast<size_t>(krows * cols));
#pragma omp for schedule(static)
      for (int64_t n = 0; n < d.n; ++n) {
        for (int64_t g = 0; g < p.groups; ++g) {
          CMapMat wg(weight.data() + g * d.cout_g * krows, d.cout_g, krows);
          CMapMat gy(dy.data() + (n * d.cout + g * d.cout_g) * cols, d.cout_g, cols);
          if (pointwise) {
            MapMat out(dx->data() + (n * d.cin + g * d.cin_g) * cols, krows, cols);
            out.noalias() = wg.transpose() * gy;
          } else {
            MapMat dcol(col.data(), krows, cols);
            dcol.noalias() = wg.transpose() * gy;
            col2im(col.data(), d, p, g * d.cin_g, dx->data() + n * d.cin * d.h * d.w);
          }
        }
      }
    }
  }

  if (dweight) {
    *dweight = Tensor(weight.shape());
    std::vector<float> col(pointwise ? 0 : static_cast<size_t>(krows * cols));
    for (int64_t n = 0; n < d.n; ++n) {
      for (int64_t g = 0; g < p.groups; ++g) {
        const float* src;
        if (pointwise) {
          src = x.data() + (n * d.cin + g * d.cin_g) * cols;
        } else {
          im2col(x.data() + n * d.cin * d.h * d.w, d, p, g * d.cin_g, col.data());
          src = col.data();
        }
        CMapMat xin(src, krows, cols);
        CMapMat gy(dy.data() + (n * d.cout + g * d.cout_g) * cols, d.cout_g, cols);
        MapMat gw(dweight->data() + g * d.cout_g * krows, d.cout_g, krows);
        gw.noalias() += gy * xin.transpose();
      }
    }
  }
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor* bias) {
  if (weight.ndim() != 2 || x.dim(-1) != weight.dim(1))
    throw ConfigError("linear shape mismatch: input " + to_string(x.shape()) + " vs weight " +
                      to_string(weight.shape()));
  const int64_t din = weight.dim(1), dout = weight.dim(0);
  if (bias && (bias->ndim() != 1 || bias->dim(0) != dout))
    throw ConfigError("linear bias shape " + to_string(bias->shape()) + " vs weight " +
                      to_string(weight.shape()));
  const int64_t rows = static_cast<int64_t>(x.size()) / din;
  Shape s = x.shape();
  s.back() = dout;
  Tensor y(s);
  CMapMat xin(x.data(), rows, din);
  CMapMat w(weight.data(), dout, din);
  MapMat out(y.data(), rows, dout);
  out.noalias() = xin * w.transpose();
  if (bias) out.rowwise() += CMapVec(bias->data(), dout).transpose();
  return y;
}

void linear_backward(const Tensor& x, const Tensor& weight, const Tensor& dy, Tensor* dx,
                     Tensor* dweight, Tensor* dbias) {
  const int64_t din = weight.dim(1), dout = weight.dim(0);
  const int64_t rows = static_cast<int64_t>(x.size()) / din;
  CMapMat xin(x.data(), rows, din);
  CMapMat w(weight.data(), dout, din);
  CMapMat g(dy.data(), rows, dout);
  if (dx) {
    *dx = Tensor(x.shape());
    MapMat(dx->data(), rows, din).noalias() = g * w;
  }
  if (dweight) {
    *dweight = Tensor(weight.shape());
    MapMat(dweight->data(), dout, din).noalias() = g.transpose() * xin;
  }
  if (dbias) {
    *dbias = Tensor({dout});
    Eigen::Map<Eigen::RowVectorXf>(dbias->data(), dout) = g.colwise().sum();
  }
}

namespace {

// Normalized axis of length `len`, `outer` independent slabs, contiguous `inner` run.
struct AxisLayout {
  int64_t outer, len, inner;
};

AxisLayout layout_for(const Shape& s, NormAxis axis) {
  if (axis == NormAxis::Last) return {numel(s) / s.back(), s.back(), 1};
  if (s.size() < 2) throw ConfigError("channel normalization needs rank >= 2");
  const int64_t inner = numel(s) / (s[0] * s[1]);
  return {s[0], s[1], inner};
}

void check_affine(const Tensor& gamma, const Tensor& beta, int64_t len, const char* what) {
  if (gamma.size() != static_cast<size_t>(len) || beta.size() != static_cast<size_t>(len))
    throw ConfigError(std::string(what) + ": affine params " + to_string(gamma.shape()) +
                      " do not match axis length " + std::to_string(len));
}

}  // namespace

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, NormAxis axis,
                  NormCache* cache) {
  const AxisLayout L = layout_for(x.shape(), axis);
  check_affine(gamma, beta, L.len, "layer_norm");
  Tensor y(x.shape());
  Tensor xhat(x.shape());
  std::vector<float> rstd(static_cast<size_t>(L.outer * L.inner));
  const float inv_len = 1.0f / static_cast<float>(L.len);
#pragma omp parallel
  {
    std::vector<float> mean(static_cast<size_t>(L.inner)), var(static_cast<size_t>(L.inner));
#pragma omp for schedule(static)
    for (int64_t o = 0; o < L.outer; ++o) {
      const float* xs = x.data() + o * L.len * L.inner;
      std::fill(mean.begin(), mean.end(), 0.0f);
      std::fill(var.begin(), var.end(), 0.0f);
      for (int64_t c = 0; c < L.len; ++c)
        for (int64_t i = 0; i < L.inner; ++i) mean[i] += xs[c * L.inner + i];
      for (int64_t i = 0; i < L.inner; ++i) mean[i] *= inv_len;
      for (int64_t c = 0; c < L.len; ++c)
        for (int64_t i = 0; i < L.inner; ++i) {
          const float t = xs[c * L.inner + i] - mean[i];
          var[i] += t * t;
        }
      float* rs = rstd.data() + o * L.inner;
      for (int64_t i = 0; i < L.inner; ++i) rs[i] = 1.0f / std::sqrt(var[i] * inv_len + kLayerNormEps);
      float* xh = xhat.data() + o * L.len * L.inner;
      float* ys = y.data() + o * L.len * L.inner;
      for (int64_t c = 0; c < L.len; ++c) {
        const float gv = gamma[static_cast<size_t>(c)], bv = beta[static_cast<size_t>(c)];
        for (int64_t i = 0; i < L.inner; ++i) {
          const float h = (xs[c * L.inner + i] - mean[i]) * rs[i];
          xh[c * L.inner + i] = h;
          ys[c * L.inner + i] = h * gv + bv;
        }
      }
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

void layer_norm_backward(const Tensor& dy, const Tensor& gamma, NormAxis axis,
                         const NormCache& cache, Tensor* dx, Tensor* dgamma, Tensor* dbeta) {
  const AxisLayout L = layout_for(dy.shape(), axis);
  const float* xh = cache.xhat.data();
  const float* g = dy.data();
  if (dgamma || dbeta) {
    if (dgamma) *dgamma = Tensor({L.len});
    if (dbeta) *dbeta = Tensor({L.len});
    for (int64_t o = 0; o < L.outer; ++o)
      for (int64_t c = 0; c < L.len; ++c) {
        const int64_t base = (o * L.len + c) * L.inner;
        float sg = 0.0f, sgx = 0.0f;
        for (int64_t i = 0; i < L.inner; ++i) {
          sg += g[base + i];
          sgx += g[base + i] * xh[base + i];
        }
        if (dgamma) (*dgamma)[static_cast<size_t>(c)] += sgx;
        if (dbeta) (*dbeta)[static_cast<size_t>(c)] += sg;
      }
  }
  if (!dx) return;
  *dx = Tensor(dy.shape());
  const float inv_len = 1.0f / static_cast<float>(L.len);
#pragma omp parallel
  {
    std::vector<float> mg(static_cast<size_t>(L.inner)), mgx(static_cast<size_t>(L.inner));
#pragma omp for schedule(static)
    for (int64_t o = 0; o < L.outer; ++o) {
      std::fill(mg.begin(), mg.end(), 0.0f);
      std::fill(mgx.begin(), mgx.end(), 0.0f);
      const int64_t base = o * L.len * L.inner;
      for (int64_t c = 0; c < L.len; ++c) {
        const float gv = gamma[static_cast<size_t>(c)];
        for (int64_t i = 0; i < L.inner; ++i) {
          const float t = g[base + c * L.inner + i] * gv;
          mg[i] += t;
          mgx[i] += t * xh[base + c * L.inner + i];
        }
      }
      const float* rs = cache.rstd.data() + o * L.inner;
      float* out = dx->data() + base;
      for (int64_t c = 0; c < L.len; ++c) {
        const float gv = gamma[static_cast<size_t>(c)];
        for (int64_t i = 0; i < L.inner; ++i) {
          const int64_t k = c * L.inner + i;
          out[k] = rs[i] * (g[base + k] * gv - mg[i] * inv_len - xh[base + k] * mgx[i] * inv_len);
        }
      }
    }
  }
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  const Tensor& running_mean, const Tensor& running_var, bool training,
                  NormCache* cache, BatchStats* stats) {
  const AxisLayout L = layout_for(x.shape(), NormAxis::Channel);
  check_affine(gamma, beta, L.len, "batch_norm");
  check_affine(running_mean, running_var, L.len, "batch_norm running stats");
  const int64_t count = L.outer * L.inner;
  std::vector<float> mean(static_cast<size_t>(L.len)), var(static_cast<size_t>(L.len));
  if (training) {
    for (int64_t c = 0; c < L.len; ++c) {
      double s = 0.0;
      for (int64_t o = 0; o < L.outer; ++o) {
        const float* xs = x.data() + (o * L.len + c) * L.inner;
        for (int64_t i = 0; i < L.inner; ++i) s += xs[i];
      }
      const double m = s / static_cast<double>(count);
      double v = 0.0;
      for (int64_t o = 0; o < L.outer; ++o) {
        const float* xs = x.data() + (o * L.len + c) * L.inner;
        for (int64_t i = 0; i < L.inner; ++i) v += (xs[i] - m) * (xs[i] - m);
      }
      mean[c] = static_cast<float>(m);
      var[c] = static_cast<float>(v / static_cast<double>(count));
    }
  } else {
    for (int64_t c = 0; c < L.len; ++c) {
      mean[c] = running_mean[static_cast<size_t>(c)];
      var[c] = running_var[static_cast<size_t>(c)];
    }
  }
  Tensor y(x.shape());
  Tensor xhat(x.shape());
  std::vector<float> rstd(static_cast<size_t>(L.len));
  for (int64_t c = 0; c < L.len; ++c) rstd[c] = 1.0f / std::sqrt(var[c] + kBatchNormEps);
  for (int64_t o = 0; o < L.outer; ++o)
    for (int64_t c = 0; c < L.len; ++c) {
      const int64_t base = (o * L.len + c) * L.inner;
      const float gv = gamma[static_cast<size_t>(c)], bv = beta[static_cast<size_t>(c)];
      for (int64_t i = 0; i < L.inner; ++i) {
        const float h = (x[static_cast<size_t>(base + i)] - mean[c]) * rstd[c];
        xhat[static_cast<size_t>(base + i)] = h;
        y[static_cast<size_t>(base + i)] = h * gv + bv;
      }
    }
  if (stats) {
    stats->mean = mean;
    stats->var = var;
    stats->count = count;
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

void batch_norm_backward(const Tensor& dy, const Tensor& gamma, bool training,
                         const NormCache& cache, Tensor* dx, Tensor* dgamma, Tensor* dbeta) {
  const AxisLayout L = layout_for(dy.shape(), NormAxis::Channel);
  const float m = static_cast<float>(L.outer * L.inner);
  std::vector<float> sg(static_cast<size_t>(L.len)), sgx(static_cast<size_t>(L.len));
  for (int64_t o = 0; o < L.outer; ++o)
    for (int64_t c = 0; c < L.len; ++c) {
      const int64_t base = (o * L.len + c) * L.inner;
      for (int64_t i = 0; i < L.inner; ++i) {
        sg[c] += dy[static_cast<size_t>(base + i)];
        sgx[c] += dy[static_cast<size_t>(base + i)] * cache.xhat[static_cast<size_t>(base + i)];
      }
    }
  if (dgamma) *dgamma = Tensor({L.len}, std::vector<float>(sgx));
  if (dbeta) *dbeta = Tensor({L.len}, std::vector<float>(sg));
  if (!dx) return;
  *dx = Tensor(dy.shape());
  for (int64_t o = 0; o < L.outer; ++o)
    for (int64_t c = 0; c < L.len; ++c) {
      const int64_t base = (o * L.len + c) * L.inner;
      const float k = gamma[static_cast<size_t>(c)] * cache.rstd[c];
      for (int64_t i = 0; i < L.inner; ++i) {
        const size_t j = static_cast<size_t>(base + i);
        (*dx)[j] = training ? k / m * (m * dy[j] - sg[c] - cache.xhat[j] * sgx[c]) : k * dy[j];
      }
    }
}

void update_running_stats(Tensor& running_mean, Tensor& running_var, const BatchStats& stats,
                          float momentum) {
  const double n = static_cast<double>(stats.count);
  const double unbias = stats.count > 1 ? n / (n - 1.0) : 1.0;
  for (size_t c = 0; c < stats.mean.size(); ++c) {
    running_mean[c] = (1.0f - momentum) * running_mean[c] + momentum * stats.mean[c];
    running_var[c] = (1.0f - momentum) * running_var[c] +
                     momentum * static_cast<float>(stats.var[c] * unbias);
  }
}

namespace {
constexpr float kGeluC = 0.7978845608028654f;  // sqrt(2/pi)
constexpr float kGeluA = 0.044715f;
}  // namespace

Tensor gelu(const Tensor& x) {
  Tensor y(x.shape());
  const size_t n = x.size();
  for (size_t i = 0; i < n; ++i) {
    const float v = x[i];
    y[i] = 0.5f * v * (1.0f + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
  }
  return y;
}

Tensor gelu_backward(const Tensor& x, const Tensor& dy) {
  Tensor dx(x.shape());
  const size_t n = x.size();
  for (size_t i = 0; i < n; ++i) {
    const float v = x[i];
    const float t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
    const float d = 0.5f * (1.0f + t) + 0.5f * v * (1.0f - t * t) * kGeluC * (1.0f + 3.0f * kGeluA * v * v);
    dx[i] = dy[i] * d;
  }
  return dx;
}

Tensor leaky_relu(const Tensor& x, float slope) {
  Tensor y(x.shape());
  for (size_t i = 0; i < x.size(); ++i) y[i] = x[i] >= 0.0f ? x[i] : slope * x[i];
  return y;
}

Tensor leaky_relu_backward(const Tensor& x, const Tensor& dy, float slope) {
  Tensor dx(x.shape());
  for (size_t i = 0; i < x.size(); ++i) dx[i] = x[i] >= 0.0f ? dy[i] : slope * dy[i];
  return dx;
}

Tensor grn(const Tensor& x, const Tensor& gamma, const Tensor& beta, GrnCache* cache) {
  if (x.ndim() != 4) throw ConfigError("grn expects (N,C,H,W), got " + to_string(x.shape()));
  const int64_t n = x.dim(0), c = x.dim(1), s = x.dim(2) * x.dim(3);
  check_affine(gamma, beta, c, "grn");
  std::vector<float> norms(static_cast<size_t>(n * c));
  std::vector<float> denom(static_cast<size_t>(n));
  Tensor y(x.shape());
  for (int64_t b = 0; b < n; ++b) {
    double total = 0.0;
    for (int64_t ch = 0; ch < c; ++ch) {
      const float* xs = x.data() + (b * c + ch) * s;
      double acc = 0.0;
      for (int64_t i = 0; i < s; ++i) acc += static_cast<double>(xs[i]) * xs[i];
      norms[b * c + ch] = static_cast<float>(std::sqrt(acc));
      total += norms[b * c + ch];
    }
    denom[b] = static_cast<float>(total / static_cast<double>(c)) + kGrnEps;
    for (int64_t ch = 0; ch < c; ++ch) {
      const float scale = norms[b * c + ch] / denom[b];
      const float gv = gamma[static_cast<size_t>(ch)], bv = beta[static_cast<size_t>(ch)];
      const float* xs = x.data() + (b * c + ch) * s;
      float* ys = y.data() + (b * c + ch) * s;
      for (int64_t i = 0; i < s; ++i) ys[i] = gv * (xs[i] * scale) + bv + xs[i];
    }
  }
  if (cache) {
    cache->norms = std::move(norms);
    cache->denom = std::move(denom);
  }
  return y;
}

void grn_backward(const Tensor& x, const Tensor& gamma, const Tensor& dy, const GrnCache& cache,
                  Tensor* dx, Tensor* dgamma, Tensor* dbeta) {
  const int64_t n = x.dim(0), c = x.dim(1), s = x.dim(2) * x.dim(3);
  if (dgamma) *dgamma = Tensor({c});
  if (dbeta) *dbeta = Tensor({c});
  if (dx) *dx = Tensor(x.shape());
  std::vector<float> a(static_cast<size_t>(c));
  for (int64_t b = 0; b < n; ++b) {
    const float den = cache.denom[b];
    // a_c = dL/dN_c
    double coupling = 0.0;
    for (int64_t ch = 0; ch < c; ++ch) {
      const float* xs = x.data() + (b * c + ch) * s;
      const float* g = dy.data() + (b * c + ch) * s;
      float sgx = 0.0f, sg = 0.0f;
      for (int64_t i = 0; i < s; ++i) {
        sgx += g[i] * xs[i];
        sg += g[i];
      }
      const float scale = cache.norms[b * c + ch] / den;
      if (dgamma) (*dgamma)[static_cast<size_t>(ch)] += sgx * scale;
      if (dbeta) (*dbeta)[static_cast<size_t>(ch)] += sg;
      a[ch] = gamma[static_cast<size_t>(ch)] * sgx;
      coupling += static_cast<double>(a[ch]) * cache.norms[b * c + ch];
    }
    if (!dx) continue;
    const float shared = static_cast<float>(coupling / (static_cast<double>(den) * den * c));
    for (int64_t ch = 0; ch < c; ++ch) {
      const float norm = cache.norms[b * c + ch];
      const float scale = norm / den;
      const float direct = gamma[static_cast<size_t>(ch)] * scale + 1.0f;
      const float dnorm = a[ch] / den - shared;
      const float via_norm = norm > 0.0f ? dnorm / norm : 0.0f;
      const float* xs = x.data() + (b * c + ch) * s;
      const float* g = dy.data() + (b * c + ch) * s;
      float* out = dx->data() + (b * c + ch) * s;
      for (int64_t i = 0; i < s; ++i) out[i] = g[i] * direct + via_norm * xs[i];
    }
  }
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.ndim() != 4) throw ConfigError("global_avg_pool expects (N,C,H,W), got " + to_string(x.shape()));
  const int64_t n = x.dim(0), c = x.dim(1), s = x.dim(2) * x.dim(3);
  Tensor y({n, c});
  for (int64_t i = 0; i < n * c; ++i) {
    const float* xs = x.data() + i * s;
    double acc = 0.0;
    for (int64_t k = 0; k < s; ++k) acc += xs[k];
    y[static_cast<size_t>(i)] = static_cast<float>(acc / static_cast<double>(s));
  }
  return y;
}

Tensor global_avg_pool_backward(const Shape& x_shape, const Tensor& dy) {
  Tensor dx(x_shape);
  const int64_t s = x_shape[2] * x_shape[3];
  const float inv = 1.0f / static_cast<float>(s);
  for (size_t i = 0; i < dy.size(); ++i) {
    float* out = dx.data() + static_cast<int64_t>(i) * s;
    std::fill(out, out + s, dy[i] * inv);
  }
  return dx;
}

double l1_loss(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "l1_loss");
  double acc = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) acc += std::fabs(static_cast<double>(pred[i]) - target[i]);
  return acc / static_cast<double>(pred.size());
}

Tensor l1_loss_grad(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "l1_loss");
  Tensor g(pred.shape());
  const float inv = 1.0f / static_cast<float>(pred.size());
  for (size_t i = 0; i < pred.size(); ++i) {
    const float d = pred[i] - target[i];
    g[i] = d > 0.0f ? inv : (d < 0.0f ? -inv : 0.0f);
  }
  return g;
}

namespace {

// Maps a flat pred index to the broadcast mask index.
struct MaskIndexer {
  Shape pred, mask;
  std::array<int64_t, 4> pstride{}, mstride{};
  int rank = 0;

  MaskIndexer(const Shape& p, const Shape& m) : pred(p), mask(m), rank(static_cast<int>(p.size())) {
    if (m.size() != p.size())
      throw ConfigError("mask rank mismatch: " + to_string(m) + " vs " + to_string(p));
    int64_t ps = 1, ms = 1;
    for (int i = rank - 1; i >= 0; --i) {
      if (m[i] != p[i] && m[i] != 1)
        throw ConfigError("mask " + to_string(m) + " not broadcastable to " + to_string(p));
      pstride[i] = ps;
      mstride[i] = m[i] == 1 ? 0 : ms;
      ps *= p[i];
      ms *= m[i];
    }
  }

  int64_t operator()(int64_t flat) const {
    int64_t idx = 0;
    for (int i = 0; i < rank; ++i) {
      const int64_t coord = flat / pstride[i];
      flat -= coord * pstride[i];
      idx += coord * mstride[i];
    }
    return idx;
  }
};

}  // namespace

int64_t mask_count(const Shape& pred_shape, const Tensor& mask) {
  MaskIndexer ix(pred_shape, mask.shape());
  const int64_t n = numel(pred_shape);
  if (mask.shape() == pred_shape) {
    int64_t k = 0;
    for (int64_t i = 0; i < n; ++i) k += mask[static_cast<size_t>(i)] != 0.0f;
    return k;
  }
  int64_t k = 0;
  for (int64_t i = 0; i < n; ++i) k += mask[static_cast<size_t>(ix(i))] != 0.0f;
  return k;
}

double masked_mse(const Tensor& pred, const Tensor& target, const Tensor& mask) {
  require_same_shape(pred, target, "masked_mse");
  MaskIndexer ix(pred.shape(), mask.shape());
  const bool same = mask.shape() == pred.shape();
  double acc = 0.0;
  int64_t count = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const size_t mi = same ? i : static_cast<size_t>(ix(static_cast<int64_t>(i)));
    if (mask[mi] == 0.0f) continue;
    const double d = static_cast<double>(pred[i]) - target[i];
    acc += d * d;
    ++count;
  }
  if (count == 0) throw DataError("masked_mse: empty mask");
  return acc / static_cast<double>(count);
}

Tensor masked_mse_grad(const Tensor& pred, const Tensor& target, const Tensor& mask) {
  require_same_shape(pred, target, "masked_mse");
  const int64_t count = mask_count(pred.shape(), mask);
  if (count == 0) throw DataError("masked_mse: empty mask");
  MaskIndexer ix(pred.shape(), mask.shape());
  const bool same = mask.shape() == pred.shape();
  const float k = 2.0f / static_cast<float>(count);
  Tensor g(pred.shape());
  for (size_t i = 0; i < pred.size(); ++i) {
    const size_t mi = same ? i : static_cast<size_t>(ix(static_cast<int64_t>(i)));
    if (mask[mi] != 0.0f) g[i] = k * (pred[i] - target[i]);
  }
  return g;
}

Tensor patches_to_image(const Tensor& x, int patch, int channels) {
  if (x.ndim() != 4 || x.dim(1) != static_cast<int64_t>(patch) * patch * channels)
    throw ConfigError("patches_to_image: input " + to_string(x.shape()) + " is not (N, " +
                      std::to_string(patch * patch * channels) + ", h, w)");
  const int64_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
  Tensor img({n, channels, h * patch, w * patch});
  for (int64_t b = 0; b < n; ++b)
    for (int64_t py = 0; py < patch; ++py)
      for (int64_t px = 0; px < patch; ++px)
        for (int64_t c = 0; c < channels; ++c) {
          const int64_t ch = (py * patch + px) * channels + c;
          for (int64_t i = 0; i < h; ++i)
            for (int64_t j = 0; j < w; ++j)
              img.at(b, c, i * patch + py, j * patch + px) = x.at(b, ch, i, j);
        }
  return img;
}

Tensor image_to_patches(const Tensor& img, int patch) {
  if (img.ndim() != 4 || img.dim(2) % patch != 0 || img.dim(3) % patch != 0)
    throw ConfigError("image_to_patches: " + to_string(img.shape()) + " not divisible by patch " +
                      std::to_string(patch));
  const int64_t n = img.dim(0), channels = img.dim(1), h = img.dim(2) / patch, w = img.dim(3) / patch;
  Tensor x({n, patch * patch * channels, h, w});
  for (int64_t b = 0; b < n; ++b)
    for (int64_t py = 0; py < patch; ++py)
      for (int64_t px = 0; px < patch; ++px)
        for (int64_t c = 0; c < channels; ++c) {
          const int64_t ch = (py * patch + px) * channels + c;
          for (int64_t i = 0; i < h; ++i)
            for (int64_t j = 0; j < w; ++j)
              x.at(b, ch, i, j) = img.at(b, c, i * patch + py, j * patch + px);
        }
  return x;
}

}  // namespace cgaze::kernels
