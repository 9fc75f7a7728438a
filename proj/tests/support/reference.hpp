// Copyright (C) 2026 The cgaze Authors
// SPDX-License-Identifier: Apache-2.0

// Naive double-precision reference implementations. They share no code with
// the library kernels and serve as forward oracles and as the function under
// finite differences.

#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "cgaze/model.hpp"
#include "cgaze/tensor.hpp"

namespace ref {

struct DT {
  cgaze::Shape shape;
  std::vector<double> v;

  DT() = default;
  explicit DT(cgaze::Shape s, double fill = 0.0) : shape(std::move(s)), v(cgaze::numel(shape), fill) {}
  static DT from(const cgaze::Tensor& t) {
    DT d(t.shape());
    for (size_t i = 0; i < t.size(); ++i) d.v[i] = t[i];
    return d;
  }
  int64_t dim(int i) const { return shape[static_cast<size_t>(i < 0 ? i + static_cast<int>(shape.size()) : i)]; }
  double& at4(int64_t n, int64_t c, int64_t h, int64_t w) {
    return v[static_cast<size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
  }
  double at4(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return v[static_cast<size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
  }
};

inline DT conv2d(const DT& x, const DT& w, const DT* b, int stride, int pad, int groups) {
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t O = w.dim(0), K = w.dim(2);
  const int64_t Ho = (H + 2 * pad - K) / stride + 1, Wo = (W + 2 * pad - K) / stride + 1;
  const int64_t cin_g = C / groups, cout_g = O / groups;
  DT y({N, O, Ho, Wo});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t o = 0; o < O; ++o) {
      const int64_t g = o / cout_g;
      for (int64_t oy = 0; oy < Ho; ++oy)
        for (int64_t ox = 0; ox < Wo; ++ox) {
          double acc = b ? b->v[static_cast<size_t>(o)] : 0.0;
          for (int64_t ci = 0; ci < cin_g; ++ci)
            for (int64_t ky = 0; ky < K; ++ky)
              for (int64_t kx = 0; kx < K; ++kx) {
                const int64_t iy = oy * stride + ky - pad, ix = ox * stride + kx - pad;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += x.at4(n, g * cin_g + ci, iy, ix) * w.at4(o, ci, ky, kx);
              }
          y.at4(n, o, oy, ox) = acc;
        }
    }
  return y;
}

inline DT linear(const DT& x, const DT& w, const DT* b) {
  const int64_t din = w.dim(1), dout = w.dim(0);
  const int64_t rows = static_cast<int64_t>(x.v.size()) / din;
  cgaze::Shape s = x.shape;
  s.back() = dout;
  DT y(s);
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t o = 0; o < dout; ++o) {
      double acc = b ? b->v[static_cast<size_t>(o)] : 0.0;
      for (int64_t i = 0; i < din; ++i) acc += x.v[static_cast<size_t>(r * din + i)] * w.v[static_cast<size_t>(o * din + i)];
      y.v[static_cast<size_t>(r * dout + o)] = acc;
    }
  return y;
}

/// Layer norm over axis 1 of (N,C,H,W) when channel_axis, else over the last axis.
inline DT layer_norm(const DT& x, const DT& g, const DT& b, bool channel_axis, double eps = 1e-6) {
  DT y(x.shape);
  int64_t outer, len, inner;
  if (channel_axis) {
    outer = x.dim(0);
    len = x.dim(1);
    inner = static_cast<int64_t>(x.v.size()) / (outer * len);
  } else {
    len = x.shape.back();
    outer = static_cast<int64_t>(x.v.size()) / len;
    inner = 1;
  }
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      double m = 0.0, var = 0.0;
      for (int64_t c = 0; c < len; ++c) m += x.v[static_cast<size_t>((o * len + c) * inner + i)];
      m /= static_cast<double>(len);
      for (int64_t c = 0; c < len; ++c) {
        const double d = x.v[static_cast<size_t>((o * len + c) * inner + i)] - m;
        var += d * d;
      }
      var /= static_cast<double>(len);
      for (int64_t c = 0; c < len; ++c) {
        const size_t k = static_cast<size_t>((o * len + c) * inner + i);
        y.v[k] = (x.v[k] - m) / std::sqrt(var + eps) * g.v[static_cast<size_t>(c)] + b.v[static_cast<size_t>(c)];
      }
    }
  return y;
}

/// Batch norm over axis 1; training uses biased batch statistics.
inline DT batch_norm(const DT& x, const DT& g, const DT& b, const DT* rm, const DT* rv,
                     bool training, double eps = 1e-5) {
  const int64_t N = x.dim(0), C = x.dim(1);
  const int64_t inner = static_cast<int64_t>(x.v.size()) / (N * C);
  DT y(x.shape);
  for (int64_t c = 0; c < C; ++c) {
    double m, var;
    if (training) {
      m = 0.0;
      var = 0.0;
      for (int64_t n = 0; n < N; ++n)
        for (int64_t i = 0; i < inner; ++i) m += x.v[static_cast<size_t>((n * C + c) * inner + i)];
      m /= static_cast<double>(N * inner);
      for (int64_t n = 0; n < N; ++n)
        for (int64_t i = 0; i < inner; ++i) {
          const double d = x.v[static_cast<size_t>((n * C + c) * inner + i)] - m;
          var += d * d;
        }
      var /= static_cast<double>(N * inner);
    } else {
      m = rm->v[static_cast<size_t>(c)];
      var = rv->v[static_cast<size_t>(c)];
    }
    for (int64_t n = 0; n < N; ++n)
      for (int64_t i = 0; i < inner; ++i) {
        const size_t k = static_cast<size_t>((n * C + c) * inner + i);
        y.v[k] = (x.v[k] - m) / std::sqrt(var + eps) * g.v[static_cast<size_t>(c)] + b.v[static_cast<size_t>(c)];
      }
  }
  return y;
}

inline DT gelu(const DT& x) {
  DT y(x.shape);
  const double c = std::sqrt(2.0 / M_PI);
  for (size_t i = 0; i < x.v.size(); ++i) {
    const double t = x.v[i];
    y.v[i] = 0.5 * t * (1.0 + std::tanh(c * (t + 0.044715 * t * t * t)));
  }
  return y;
}

/// Sign pattern of every leaky_relu input seen since the last reset. Finite
/// differences are only meaningful when the pattern is the same on both sides.
inline thread_local uint64_t kink_signature = 0;

inline DT leaky_relu(const DT& x, double slope = 0.01) {
  DT y(x.shape);
  for (size_t i = 0; i < x.v.size(); ++i) {
    const bool pos = x.v[i] >= 0;
    kink_signature = (kink_signature ^ (pos ? 0x9E37u : 0x7F4Au) ^ i) * 0x100000001B3ull;
    y.v[i] = pos ? x.v[i] : slope * x.v[i];
  }
  return y;
}

inline DT grn(const DT& x, const DT& g, const DT& b, double eps = 1e-6) {
  const int64_t N = x.dim(0), C = x.dim(1), S = x.dim(2) * x.dim(3);
  DT y(x.shape);
  for (int64_t n = 0; n < N; ++n) {
    std::vector<double> G(static_cast<size_t>(C));
    double mean = 0.0;
    for (int64_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (int64_t i = 0; i < S; ++i) {
        const double t = x.v[static_cast<size_t>((n * C + c) * S + i)];
        s += t * t;
      }
      G[c] = std::sqrt(s);
      mean += G[c];
    }
    mean /= static_cast<double>(C);
    for (int64_t c = 0; c < C; ++c) {
      const double nc = G[c] / (mean + eps);
      for (int64_t i = 0; i < S; ++i) {
        const size_t k = static_cast<size_t>((n * C + c) * S + i);
        y.v[k] = g.v[static_cast<size_t>(c)] * (x.v[k] * nc) + b.v[static_cast<size_t>(c)] + x.v[k];
      }
    }
  }
  return y;
}

inline DT gap(const DT& x) {
  const int64_t N = x.dim(0), C = x.dim(1), S = x.dim(2) * x.dim(3);
  DT y({N, C});
  for (int64_t i = 0; i < N * C; ++i) {
    double s = 0.0;
    for (int64_t k = 0; k < S; ++k) s += x.v[static_cast<size_t>(i * S + k)];
    y.v[static_cast<size_t>(i)] = s / static_cast<double>(S);
  }
  return y;
}

inline DT add(const DT& a, const DT& b) {
  DT y = a;
  for (size_t i = 0; i < y.v.size(); ++i) y.v[i] += b.v[i];
  return y;
}

inline double mse(const DT& a, const DT& t) {
  double s = 0.0;
  for (size_t i = 0; i < a.v.size(); ++i) s += (a.v[i] - t.v[i]) * (a.v[i] - t.v[i]);
  return s / static_cast<double>(a.v.size());
}

/// Double copies of parameter values keyed by name.
using Params = std::map<std::string, DT>;

inline Params to_params(const cgaze::ConstParamRefs& ps) {
  Params out;
  for (const auto* p : ps) out[p->name] = DT::from(p->value);
  return out;
}

inline DT conv_by(const Params& P, const std::string& prefix, const DT& x, int stride, int pad,
                  int groups) {
  return conv2d(x, P.at(prefix + ".weight"), &P.at(prefix + ".bias"), stride, pad, groups);
}

/// Adapter with batch norm in training mode.
inline DT adapter(const Params& P, const std::string& pre, const DT& x) {
  DT h = conv_by(P, pre + ".fc_down", x, 1, 0, 1);
  h = batch_norm(h, P.at(pre + ".bn.weight"), P.at(pre + ".bn.bias"), nullptr, nullptr, true);
  h = leaky_relu(h);
  return conv_by(P, pre + ".fc_up", h, 1, 0, 1);
}

inline DT block(const Params& P, const std::string& pre, const DT& x, bool with_adapter) {
  const int64_t dim = x.dim(1);
  DT h = conv_by(P, pre + ".dwconv", x, 1, 3, static_cast<int>(dim));
  h = layer_norm(h, P.at(pre + ".norm.weight"), P.at(pre + ".norm.bias"), true);
  h = conv_by(P, pre + ".pwconv1", h, 1, 0, 1);
  h = gelu(h);
  h = grn(h, P.at(pre + ".grn.gamma"), P.at(pre + ".grn.beta"));
  h = conv_by(P, pre + ".pwconv2", h, 1, 0, 1);
  if (with_adapter) h = add(h, adapter(P, pre + ".adapter", h));
  return add(x, h);
}

inline DT psi(const Params& P, const std::string& pre, const DT& z) {
  const int64_t dim = z.dim(1);
  DT h = conv_by(P, pre + ".dwconv", z, 1, 3, static_cast<int>(dim));
  h = layer_norm(h, P.at(pre + ".norm.weight"), P.at(pre + ".norm.bias"), true);
  h = conv_by(P, pre + ".pwconv1", h, 1, 0, 1);
  h = gelu(h);
  h = grn(h, P.at(pre + ".grn.gamma"), P.at(pre + ".grn.beta"));
  h = conv_by(P, pre + ".pwconv2", h, 1, 0, 1);
  return conv_by(P, pre + ".fc", add(z, h), 1, 0, 1);
}

}  // namespace ref
