// Copyright (C) 2026 The cgaze Authors
// SPDX-License-Identifier: Apache-2.0

// Adapter fine-tuning for gaze regression: label-space clustering, balanced
// sampling, generalized and five-shot personalized training, evaluation.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cgaze/dataset.hpp"
#include "cgaze/model.hpp"

namespace cgaze {

/// Unit gaze vector (cos p sin y, sin p, cos p cos y).
std::array<double, 3> gaze_vector(double pitch, double yaw);
/// Angle between two gaze directions in degrees, in [0, 180].
double angular_error(double pitch_pred, double yaw_pred, double pitch_true, double yaw_true);

using Point2 = std::array<double, 2>;

struct ClusterModel {
  int k = 0;
  std::vector<Point2> centroids;
  std::vector<int> assignment;  // per input point
  double inertia = 0.0;
  int iterations = 0;
};

/// Index of the nearest centroid; ties go to the lower index.
int nearest_centroid(const std::vector<Point2>& centroids, const Point2& p);

/// Lloyd's algorithm from a k-means++ start, at most `max_iter` iterations.
/// An emptied cluster is re-seeded with the point farthest from its centroid.
ClusterModel kmeans_cluster(std::span<const Point2> points, int k, uint64_t seed, int max_iter = 100);
/// Clusters (pitch, yaw) labels.
ClusterModel kmeans_cluster(const GazeDataset& samples, int k, uint64_t seed);

/// One assignment + update pass; leaves a converged model unchanged.
ClusterModel lloyd_iteration(std::span<const Point2> points, const ClusterModel& model);

/// Round-robin over non-empty clusters, each drawn from its own shuffled queue
/// that is reshuffled when exhausted.
class BalancedSampler {
 public:
  BalancedSampler(const ClusterModel& clusters, uint64_t seed);
  int64_t next();
  std::vector<int64_t> next_batch(int batch_size);
  int active_clusters() const { return static_cast<int>(queues_.size()); }

 private:
  struct Queue {
    int cluster;
    std::vector<int64_t> members;
    size_t pos = 0;
  };
  std::vector<Queue> queues_;
  size_t turn_ = 0;
  std::mt19937_64 rng_;
};

struct TrainConfig {
  float lr = 2e-3f;
  int epochs = 20;
  int batch_size = 15;
  int replay_r = 15;
  uint64_t seed = 0;
  int clusters = 15;
  int warmup_epochs = 1;  // head-only epochs before the adapters train
  float warmup_lr = 5e-3f;
  int personal_epochs = 150;
  float personal_lr = 5e-4f;
  bool personal_freeze_bn = true;  // adapter batch norm on running statistics
};

/// Flat key=value file; '#' starts a comment. Unknown keys are errors.
TrainConfig read_train_config(const std::filesystem::path& path, TrainConfig base = {});
TrainConfig parse_train_config(const std::string& text, TrainConfig base = {});

struct SubjectError {
  std::string subject;
  int64_t n = 0;
  double mean_deg = 0.0;
  double median_deg = 0.0;
};

struct EvalReport {
  int64_t n = 0;
  double mean_deg = 0.0;
  double median_deg = 0.0;
  std::vector<double> per_sample;
  std::vector<SubjectError> subjects;  // sorted by id
};

/// (N, 2) predictions for the given rows, evaluated in batches.
Tensor predict_rows(const GazeModel& model, const GazeDataset& data, std::span<const int64_t> rows);
EvalReport evaluate(const GazeModel& model, const GazeDataset& samples);
void write_eval_csv(const EvalReport& report, const std::filesystem::path& path);

struct TrainReport {
  int64_t tunable_params = 0;
  std::vector<double> val_mean_deg;  // after every epoch, warmup included
  double best_val_mean_deg = 0.0;
  int best_epoch = -1;
  uint64_t backbone_hash_before = 0;
  uint64_t backbone_hash_after = 0;
};

/// Hash of every parameter that is neither an adapter nor the head.
uint64_t backbone_hash(const GazeModel& model);

/// Head-only warmup, then all adapters. Returns with the weights of the epoch
/// with the lowest validation error.
TrainReport train_generalized(GazeModel& model, const GazeDataset& train, const GazeDataset& val,
                              const TrainConfig& cfg,
                              const std::function<void(int, double)>& on_epoch = {});

struct PersonalizeReport {
  int64_t tunable_params = 0;
  double personal_before = 0.0, personal_after = 0.0;  // on the five shots
  double subject_before = 0.0, subject_after = 0.0;    // held-out samples of the subject
  double general_before = 0.0, general_after = 0.0;    // generalized validation split
  int best_epoch = -1;
};

struct PersonalizeData {
  GazeDataset personal;        // exactly five samples of one subject
  GazeDataset replay;          // generalized training set
  GazeDataset subject_holdout; // optional
  GazeDataset general_val;     // optional
};

/// Trains only stage-4 adapters on five personal shots mixed with `replay_r`
/// cluster-balanced replay samples per step (r = 0 disables replay).
PersonalizeReport personalize(GazeModel& model, const PersonalizeData& data, const TrainConfig& cfg);

bool is_stage4_adapter_param(const std::string& name);

}  // namespace cgaze
