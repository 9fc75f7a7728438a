// Copyright (C) 2026 The cgaze Authors
// SPDX-License-Identifier: Apache-2.0

// Per-image forward latency measurement and teacher/student comparison.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cgaze/model.hpp"

namespace cgaze {

struct LatencyReport {
  std::string name;
  int n_runs = 0;
  int warmup = 0;
  double mean_ms = 0, std_ms = 0, p50_ms = 0, p99_ms = 0;
  std::string host;
  int threads = 1;
  bool operator==(const LatencyReport&) const = default;
};

struct LatencyOptions {
  int n_runs = 1000;
  int warmup = 20;
  int threads = 1;
  uint64_t seed = 0;
};

/// Summary statistics of per-run timings; percentiles interpolate linearly.
LatencyReport summarize_latency(std::string name, const std::vector<double>& run_ms, int warmup, int threads);

/// Times `n_runs` batch-1 forwards after `warmup` untimed ones on a fixed
/// random input of shape (1, C, H, W). Per-run timings go to `run_ms` if given.
LatencyReport measure_latency(const GazeModel& model, const std::string& name, const Shape& input_shape,
                              const LatencyOptions& opt = {}, std::vector<double>* run_ms = nullptr);

std::string host_descriptor();

std::string to_json(const LatencyReport& r);
LatencyReport latency_from_json(const std::string& text);
void write_runs_csv(const std::filesystem::path& path, const std::vector<double>& run_ms);

struct LatencyComparison {
  double ratio = 0;  // mean_b / mean_a
  std::string table;
};

LatencyComparison compare(const LatencyReport& a, const LatencyReport& b);

}  // namespace cgaze
