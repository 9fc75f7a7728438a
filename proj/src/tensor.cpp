// Copyright (C) 2026 The cgaze Authors
// SPDX-License-Identifier: Apache-2.0

#include "cgaze/tensor.hpp"

#include <algorithm>
#include <cstring>

namespace cgaze {

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::string s = "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

namespace {
void check_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > 4)
    throw ConfigError("tensor rank must be 1..4, got " + to_string(shape));
  for (int64_t d : shape)
    if (d <= 0) throw ConfigError("tensor dims must be positive, got " + to_string(shape));
}
}  // namespace

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(static_cast<size_t>(numel(shape_)), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  check_shape(shape_);
  if (static_cast<int64_t>(data_.size()) != numel(shape_))
    throw ConfigError("tensor data length " + std::to_string(data_.size()) +
                      " does not match shape " + to_string(shape_));
}

Tensor::Tensor(Shape shape, std::initializer_list<float> values)
    : Tensor(std::move(shape), std::vector<float>(values)) {}

int64_t Tensor::dim(int axis) const {
  if (axis < 0) axis += ndim();
  if (axis < 0 || axis >= ndim())
    throw ConfigError("axis out of range for shape " + to_string(shape_));
  return shape_[static_cast<size_t>(axis)];
}

float& Tensor::at(int64_t n, int64_t c, int64_t h, int64_t w) {
  return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
}

float Tensor::at(int64_t n, int64_t c, int64_t h, int64_t w) const {
  return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (numel(shape) != numel(shape_))
    throw ConfigError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::slice_batch(int64_t begin, int64_t end) const {
  if (begin < 0 || end > shape_[0] || begin >= end)
    throw ConfigError("bad batch slice [" + std::to_string(begin) + "," + std::to_string(end) +
                      ") of " + to_string(shape_));
  const int64_t inner = numel(shape_) / shape_[0];
  Shape s = shape_;
  s[0] = end - begin;
  return Tensor(std::move(s), std::vector<float>(data_.begin() + begin * inner,
                                                 data_.begin() + end * inner));
}

bool Tensor::bit_equal(const Tensor& other) const {
  return shape_ == other.shape_ &&
         std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0;
}

Tensor stack_batch(std::span<const Tensor> items) {
  if (items.empty()) throw ConfigError("stack_batch of zero tensors");
  Shape s = items.front().shape();
  int64_t lead = 0;
  for (const auto& t : items) {
    if (t.ndim() != static_cast<int>(s.size()) ||
        !std::equal(s.begin() + 1, s.end(), t.shape().begin() + 1))
      throw ConfigError("stack_batch shape mismatch: " + to_string(s) + " vs " +
                        to_string(t.shape()));
    lead += t.shape()[0];
  }
  std::vector<float> data;
  data.reserve(static_cast<size_t>(lead * (numel(s) / s[0])));
  for (const auto& t : items) data.insert(data.end(), t.values().begin(), t.values().end());
  s[0] = lead;
  return Tensor(std::move(s), std::move(data));
}

Tensor gather_batch(const Tensor& t, std::span<const int64_t> rows) {
  if (rows.empty()) throw ConfigError("gather_batch of zero rows");
  Shape s = t.shape();
  const size_t row = static_cast<size_t>(numel(s) / s[0]);
  s[0] = static_cast<int64_t>(rows.size());
  Tensor out(s);
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= t.shape()[0]) throw ConfigError("gather_batch index out of range");
    std::copy_n(t.data() + static_cast<size_t>(rows[i]) * row, row, out.data() + i * row);
  }
  return out;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw ConfigError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                      to_string(b.shape()));
}

}  // namespace cgaze
