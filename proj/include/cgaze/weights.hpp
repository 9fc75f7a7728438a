// Copyright (C) 2026 The cgaze Authors
// SPDX-License-Identifier: Apache-2.0

// DFTW weight files.
//
//   "DFTW" | version u32 | count u32 |
//   count x { name_len u16 | name | dtype u8 | ndim u8 | dims u32[ndim] | data } |
//   crc32 u32 over every preceding byte
//
// All integers and floats little-endian. dtype 0 is float32, the only code
// this version writes or reads.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "cgaze/model.hpp"

namespace cgaze {

inline constexpr uint32_t kWeightFileVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

std::vector<uint8_t> encode_tensors(const NamedTensors& tensors);
NamedTensors decode_tensors(const std::vector<uint8_t>& bytes);

void write_tensors(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors read_tensors(const std::filesystem::path& path);

/// Writes parameter values (buffers included) in registry order.
void save_weights(const ConstParamRefs& params, const std::filesystem::path& path);

enum class LoadMode {
  Strict,  // file names == parameter names
  Subset,  // file names a subset of parameter names
};

/// Copies values into matching parameters. Shapes must agree exactly.
void load_weights(const ParamRefs& params, const NamedTensors& tensors, LoadMode mode);
void load_weights(const ParamRefs& params, const std::filesystem::path& path, LoadMode mode);

/// Entries of a file that belong to a GazeModel (no decoder or optimizer state).
NamedTensors model_entries(const NamedTensors& tensors);

/// Builds the network described by the file and loads it. When adapters are
/// present only they are trainable.
GazeModel model_from_tensors(const NamedTensors& tensors);
GazeModel load_model(const std::filesystem::path& path);
void save_model(const GazeModel& model, const std::filesystem::path& path);

}  // namespace cgaze
