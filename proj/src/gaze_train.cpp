// Copyright (C) 2026 The cgaze Authors
// SPDX-License-Identifier: Apache-2.0

#include "cgaze/gaze_train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include "cgaze/optim.hpp"
#include "cgaze/rng.hpp"

namespace cgaze {

std::array<double, 3> gaze_vector(double pitch, double yaw) {
  return {std::cos(pitch) * std::sin(yaw), std::sin(pitch), std::cos(pitch) * std::cos(yaw)};
}

double angular_error(double pitch_pred, double yaw_pred, double pitch_true, double yaw_true) {
  const auto a = gaze_vector(pitch_pred, yaw_pred), b = gaze_vector(pitch_true, yaw_true);
  const double dot = std::clamp(a[0] * b[0] + a[1] * b[1] + a[2] * b[2], -1.0, 1.0);
  return std::acos(dot) * 180.0 / std::numbers::pi;
}

// ---------------------------------------------------------------------------
// k-means

namespace {

double dist2(const Point2& a, const Point2& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1];
  return dx * dx + dy * dy;
}

std::vector<Point2> kmeanspp(std::span<const Point2> pts, int k, std::mt19937_64& rng) {
  std::vector<Point2> c;
  c.push_back(pts[std::uniform_int_distribution<size_t>(0, pts.size() - 1)(rng)]);
  std::vector<double> d(pts.size());
  for (size_t i = 0; i < pts.size(); ++i) d[i] = dist2(pts[i], c[0]);
  while (static_cast<int>(c.size()) < k) {
    const double total = std::accumulate(d.begin(), d.end(), 0.0);
    size_t pick = 0;
    if (total <= 0.0) {
      // every point already coincides with a centroid; take the first unused index
      pick = c.size() % pts.size();
    } else {
      double r = std::uniform_real_distribution<double>(0.0, total)(rng);
      for (pick = 0; pick + 1 < pts.size(); ++pick) {
        r -= d[pick];
        if (r < 0.0) break;
      }
    }
    c.push_back(pts[pick]);
    for (size_t i = 0; i < pts.size(); ++i) d[i] = std::min(d[i], dist2(pts[i], c.back()));
  }
  return c;
}

// Assigns points and recomputes centroids; returns whether any assignment changed.
bool lloyd_pass(std::span<const Point2> pts, ClusterModel& m) {
  bool changed = m.assignment.size() != pts.size();
  m.assignment.resize(pts.size(), -1);
  for (size_t i = 0; i < pts.size(); ++i) {
    const int a = nearest_centroid(m.centroids, pts[i]);
    if (a != m.assignment[i]) {
      m.assignment[i] = a;
      changed = true;
    }
  }
  std::vector<Point2> sum(static_cast<size_t>(m.k), Point2{0.0, 0.0});
  std::vector<int64_t> count(static_cast<size_t>(m.k), 0);
  for (size_t i = 0; i < pts.size(); ++i) {
    const auto a = static_cast<size_t>(m.assignment[i]);
    sum[a][0] += pts[i][0];
    sum[a][1] += pts[i][1];
    ++count[a];
  }
  for (size_t j = 0; j < sum.size(); ++j) {
    if (count[j] == 0) continue;
    m.centroids[j] = {sum[j][0] / static_cast<double>(count[j]), sum[j][1] / static_cast<double>(count[j])};
  }
  // Empty clusters take the point farthest from its current centroid.
  for (size_t j = 0; j < sum.size(); ++j) {
    if (count[j] != 0) continue;
    size_t far = 0;
    double best = -1.0;
    for (size_t i = 0; i < pts.size(); ++i) {
      const double d = dist2(pts[i], m.centroids[static_cast<size_t>(m.assignment[i])]);
      if (d > best) {
        best = d;
        far = i;
      }
    }
    --count[static_cast<size_t>(m.assignment[far])];
    m.assignment[far] = static_cast<int>(j);
    m.centroids[j] = pts[far];
    count[j] = 1;
    changed = true;
  }
  return changed;
}

double inertia_of(std::span<const Point2> pts, const ClusterModel& m) {
  double s = 0.0;
  for (size_t i = 0; i < pts.size(); ++i) s += dist2(pts[i], m.centroids[static_cast<size_t>(m.assignment[i])]);
  return s;
}

}  // namespace

int nearest_centroid(const std::vector<Point2>& centroids, const Point2& p) {
  int best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (size_t j = 0; j < centroids.size(); ++j) {
    const double d = dist2(p, centroids[j]);
    if (d < bd) {
      bd = d;
      best = static_cast<int>(j);
    }
  }
  return best;
}

ClusterModel kmeans_cluster(std::span<const Point2> points, int k, uint64_t seed, int max_iter) {
  if (k < 1) throw ConfigError("k-means needs k >= 1");
  if (static_cast<int64_t>(points.size()) < k)
    throw DataError("k-means: " + std::to_string(points.size()) + " samples for k=" + std::to_string(k));
  std::mt19937_64 rng(derive_seed({seed, 0x6B6D65616E73ull}));
  ClusterModel m;
  m.k = k;
  m.centroids = kmeanspp(points, k, rng);
  for (m.iterations = 0; m.iterations < max_iter;) {
    ++m.iterations;
    if (!lloyd_pass(points, m)) break;
  }
  m.inertia = inertia_of(points, m);
  return m;
}

ClusterModel kmeans_cluster(const GazeDataset& samples, int k, uint64_t seed) {
  std::vector<Point2> pts;
  pts.reserve(samples.size());
  for (const auto& s : samples) pts.push_back({s.pitch, s.yaw});
  return kmeans_cluster(pts, k, seed);
}

ClusterModel lloyd_iteration(std::span<const Point2> points, const ClusterModel& model) {
  ClusterModel m = model;
  lloyd_pass(points, m);
  m.inertia = inertia_of(points, m);
  return m;
}

BalancedSampler::BalancedSampler(const ClusterModel& clusters, uint64_t seed)
    : rng_(derive_seed({seed, 0x62616C616E6365ull})) {
  std::vector<Queue> q(static_cast<size_t>(clusters.k));
  for (int j = 0; j < clusters.k; ++j) q[static_cast<size_t>(j)].cluster = j;
  for (size_t i = 0; i < clusters.assignment.size(); ++i)
    q.at(static_cast<size_t>(clusters.assignment[i])).members.push_back(static_cast<int64_t>(i));
  for (auto& c : q) {
    if (c.members.empty()) continue;
    std::shuffle(c.members.begin(), c.members.end(), rng_);
    queues_.push_back(std::move(c));
  }
  if (queues_.empty()) throw DataError("balanced sampler: no samples");
}

int64_t BalancedSampler::next() {
  Queue& q = queues_[turn_];
  turn_ = (turn_ + 1) % queues_.size();
  if (q.pos == q.members.size()) {
    std::shuffle(q.members.begin(), q.members.end(), rng_);
    q.pos = 0;
  }
  return q.members[q.pos++];
}

std::vector<int64_t> BalancedSampler::next_batch(int batch_size) {
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  std::vector<int64_t> b(static_cast<size_t>(batch_size));
  for (auto& i : b) i = next();
  return b;
}

// ---------------------------------------------------------------------------
// configuration

TrainConfig parse_train_config(const std::string& text, TrainConfig c) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r"), e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    if (trim(line).empty()) continue;
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
    try {
      if (key == "lr") c.lr = std::stof(val);
      else if (key == "epochs") c.epochs = std::stoi(val);
      else if (key == "batch_size") c.batch_size = std::stoi(val);
      else if (key == "replay_r") c.replay_r = std::stoi(val);
      else if (key == "seed") c.seed = std::stoull(val);
      else if (key == "clusters") c.clusters = std::stoi(val);
      else if (key == "warmup_epochs") c.warmup_epochs = std::stoi(val);
      else if (key == "warmup_lr") c.warmup_lr = std::stof(val);
      else if (key == "personal_epochs") c.personal_epochs = std::stoi(val);
      else if (key == "personal_lr") c.personal_lr = std::stof(val);
      else throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    } catch (const std::logic_error&) {
      throw ConfigError("config line " + std::to_string(lineno) + ": bad value for '" + key + "'");
    }
  }
  if (c.lr <= 0 || c.epochs < 0 || c.batch_size < 1 || c.replay_r < 0 || c.clusters < 1 || c.warmup_epochs < 0)
    throw ConfigError("config values out of range");
  return c;
}

TrainConfig read_train_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_train_config(ss.str(), base);
}

// ---------------------------------------------------------------------------
// evaluation

namespace {

constexpr int64_t kEvalBatch = 32;

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

Tensor predict_rows(const GazeModel& model, const GazeDataset& data, std::span<const int64_t> rows) {
  std::vector<Tensor> out;
  for (size_t b = 0; b < rows.size(); b += kEvalBatch) {
    const auto chunk = rows.subspan(b, std::min<size_t>(kEvalBatch, rows.size() - b));
    out.push_back(predict_gaze(model, stack_images(data, chunk)));
  }
  return stack_batch(out);
}

EvalReport evaluate(const GazeModel& model, const GazeDataset& samples) {
  if (samples.empty()) throw DataError("empty dataset");
  const auto rows = all_rows(samples);
  const Tensor pred = predict_rows(model, samples, rows);
  EvalReport r;
  r.n = static_cast<int64_t>(samples.size());
  std::map<std::string, std::vector<double>> by_subject;
  for (size_t i = 0; i < samples.size(); ++i) {
    const double e = angular_error(pred[2 * i], pred[2 * i + 1], samples[i].pitch, samples[i].yaw);
    r.per_sample.push_back(e);
    by_subject[samples[i].subject].push_back(e);
  }
  r.mean_deg = mean_of(r.per_sample);
  r.median_deg = median_of(r.per_sample);
  for (const auto& [id, errs] : by_subject)
    r.subjects.push_back({id, static_cast<int64_t>(errs.size()), mean_of(errs), median_of(errs)});
  return r;
}

void write_eval_csv(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write report " + path.string());
  f.precision(6);
  f << std::fixed << "subject_id,n,mean_deg,median_deg\n";
  for (const auto& s : report.subjects) f << s.subject << ',' << s.n << ',' << s.mean_deg << ',' << s.median_deg << '\n';
}

// ---------------------------------------------------------------------------
// training

namespace {

using Snapshot = std::vector<std::pair<Parameter*, Tensor>>;

Snapshot snapshot(GazeModel& m, const std::function<bool(const std::string&)>& pred) {
  Snapshot s;
  for (auto* p : m.params())
    if (pred(p->name)) s.emplace_back(p, p->value);
  return s;
}

void restore(const Snapshot& s) {
  for (const auto& [p, v] : s) p->value = v;
}

double l1_step(GazeModel& m, const GazeDataset& data, std::span<const int64_t> rows, AdamW& opt, float lr,
               bool freeze_bn_stats = false) {
  const Tensor x = stack_images(data, rows), y = stack_labels(data, rows);
  ag::Tape tape;
  std::vector<BnUpdate> bn;
  ForwardCtx ctx{tape, true, &bn, freeze_bn_stats};
  ag::Var loss = ag::l1_loss(forward_gaze(m, ag::constant(x), ctx), y);
  ag::backward(loss);
  ParamRefs ps = m.params();
  for (const auto* p : ps)
    if (!p->trainable && tape.grad_of(*p)) throw InternalError("frozen parameter '" + p->name + "' received a gradient");
  tape.write_grads(ps);
  opt.step(ps, lr);
  for (auto* p : ps) p->zero_grad();
  apply_bn_updates(ps, bn);
  return loss->value[0];
}

bool adapter_or_head(const std::string& n) { return is_adapter_param(n) || is_head_param(n); }

}  // namespace

uint64_t backbone_hash(const GazeModel& model) {
  return hash_params(filter_params(model.params(), [](const std::string& n) { return !adapter_or_head(n); }));
}

bool is_stage4_adapter_param(const std::string& name) { return is_adapter_param(name) && stage_of(name) == 3; }

TrainReport train_generalized(GazeModel& model, const GazeDataset& train, const GazeDataset& val,
                              const TrainConfig& cfg, const std::function<void(int, double)>& on_epoch) {
  if (!model.has_adapters()) throw ConfigError("train_generalized: model has no adapters attached");
  if (train.empty()) throw DataError("empty dataset");
  if (val.empty()) throw DataError("empty validation set");

  TrainReport rep;
  rep.backbone_hash_before = backbone_hash(model);
  set_trainable(model.params(), is_adapter_param);
  rep.tunable_params = count_params(model, true);

  const ClusterModel clusters = kmeans_cluster(train, std::min<int>(cfg.clusters, static_cast<int>(train.size())), cfg.seed);
  BalancedSampler sampler(clusters, cfg.seed);
  const int64_t steps_per_epoch =
      (static_cast<int64_t>(train.size()) + cfg.batch_size - 1) / cfg.batch_size;
  const int64_t adapter_steps = steps_per_epoch * std::max(0, cfg.epochs - cfg.warmup_epochs);

  double best = std::numeric_limits<double>::infinity();
  Snapshot best_weights = snapshot(model, adapter_or_head);
  AdamW head_opt, adapter_opt;
  int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const bool warm = epoch < cfg.warmup_epochs;
    set_trainable(model.params(), warm ? is_head_param : is_adapter_param);
    for (int64_t s = 0; s < steps_per_epoch; ++s) {
      const auto rows = sampler.next_batch(cfg.batch_size);
      float lr = cfg.warmup_lr;
      if (!warm) {
        const double t = static_cast<double>(step++) / static_cast<double>(std::max<int64_t>(1, adapter_steps));
        lr = static_cast<float>(cfg.lr * (0.05 + 0.95 * 0.5 * (1.0 + std::cos(std::numbers::pi * t))));
      }
      l1_step(model, train, rows, warm ? head_opt : adapter_opt, lr);
    }
    const double err = evaluate(model, val).mean_deg;
    rep.val_mean_deg.push_back(err);
    if (on_epoch) on_epoch(epoch, err);
    if (err < best) {
      best = err;
      rep.best_epoch = epoch;
      best_weights = snapshot(model, adapter_or_head);
    }
  }
  restore(best_weights);
  set_trainable(model.params(), is_adapter_param);
  rep.best_val_mean_deg = best;
  rep.backbone_hash_after = backbone_hash(model);
  if (rep.backbone_hash_after != rep.backbone_hash_before)
    throw InternalError("frozen backbone changed during generalized training");
  return rep;
}

PersonalizeReport personalize(GazeModel& model, const PersonalizeData& data, const TrainConfig& cfg) {
  if (!model.has_adapters()) throw ConfigError("personalize: model has no adapters attached");
  if (data.personal.size() != 5)
    throw DataError("personalization needs exactly 5 personal samples, got " + std::to_string(data.personal.size()));
  for (const auto& s : data.personal)
    if (s.subject != data.personal.front().subject)
      throw DataError("personal samples mix subjects '" + data.personal.front().subject + "' and '" + s.subject + "'");
  if (cfg.replay_r > 0 && data.replay.empty()) throw DataError("replay set is empty");

  PersonalizeReport rep;
  set_trainable(model.params(), is_stage4_adapter_param);
  rep.tunable_params = count_params(model, true);
  const uint64_t frozen_before =
      hash_params(filter_params(std::as_const(model).params(), [](const std::string& n) { return !is_stage4_adapter_param(n); }));

  rep.personal_before = evaluate(model, data.personal).mean_deg;
  if (!data.subject_holdout.empty()) rep.subject_before = evaluate(model, data.subject_holdout).mean_deg;
  if (!data.general_val.empty()) rep.general_before = evaluate(model, data.general_val).mean_deg;

  // Personal shots first, replay samples appended after them.
  GazeDataset pool = data.personal;
  std::vector<int64_t> replay_rows;
  std::optional<BalancedSampler> sampler;
  if (cfg.replay_r > 0) {
    pool.insert(pool.end(), data.replay.begin(), data.replay.end());
    const int k = std::min<int>(cfg.clusters, static_cast<int>(data.replay.size()));
    sampler.emplace(kmeans_cluster(data.replay, k, cfg.seed), cfg.seed ^ 0x706572736Full);
  }

  AdamW opt;
  double best = rep.personal_before;
  Snapshot best_weights = snapshot(model, is_stage4_adapter_param);
  for (int epoch = 0; epoch < cfg.personal_epochs; ++epoch) {
    std::vector<int64_t> rows{0, 1, 2, 3, 4};
    if (sampler)
      for (int64_t r : sampler->next_batch(cfg.replay_r)) rows.push_back(r + 5);
    l1_step(model, pool, rows, opt, cfg.personal_lr, cfg.personal_freeze_bn);
    const double err = evaluate(model, data.personal).mean_deg;
    if (err < best) {
      best = err;
      rep.best_epoch = epoch;
      best_weights = snapshot(model, is_stage4_adapter_param);
    }
  }
  restore(best_weights);
  rep.personal_after = best;
  if (!data.subject_holdout.empty()) rep.subject_after = evaluate(model, data.subject_holdout).mean_deg;
  if (!data.general_val.empty()) rep.general_after = evaluate(model, data.general_val).mean_deg;
  const uint64_t frozen_after =
      hash_params(filter_params(std::as_const(model).params(), [](const std::string& n) { return !is_stage4_adapter_param(n); }));
  if (frozen_after != frozen_before) throw InternalError("personalization changed frozen parameters");
  return rep;
}

}  // namespace cgaze
