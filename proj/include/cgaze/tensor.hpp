// Copyright (C) 2026 The cgaze Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cgaze {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape mismatches, invalid hyper-parameters, misuse of a model.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Missing files, malformed manifests, empty datasets.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Weight files that fail integrity (CRC) or carry an unknown layout.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

class VersionError : public Error {
 public:
  using Error::Error;
};

/// Broken internal invariant (e.g. a frozen parameter received a gradient).
class InternalError : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major float32 array with up to four dimensions (N,C,H,W order
/// for image-like data).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);
  Tensor(Shape shape, std::initializer_list<float> values);

  const Shape& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int axis) const;
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }

  float& operator[](size_t i) { return data_[i]; }
  float operator[](size_t i) const { return data_[i]; }

  /// NCHW element access; only valid on 4-d tensors.
  float& at(int64_t n, int64_t c, int64_t h, int64_t w);
  float at(int64_t n, int64_t c, int64_t h, int64_t w) const;

  Tensor reshaped(Shape shape) const;
  void fill(float v);

  /// Slice [begin, end) along the leading axis.
  Tensor slice_batch(int64_t begin, int64_t end) const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool bit_equal(const Tensor& other) const;

 private:
  Shape shape_;
  std::vector<float> data_;
};

/// Concatenate tensors of identical trailing shape along the leading axis.
Tensor stack_batch(std::span<const Tensor> items);

/// Rows of `t` along the leading axis, in the given order.
Tensor gather_batch(const Tensor& t, std::span<const int64_t> rows);

/// Throws ConfigError naming both shapes when they differ.
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

}  // namespace cgaze
