// Copyright (C) 2026 The cgaze Authors
// SPDX-License-Identifier: Apache-2.0

#include "cgaze/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "cgaze/rng.hpp"

namespace cgaze {

namespace {

constexpr int kSuper = 3;  // supersampling per axis
constexpr float kScleraTone = 0.85f;
constexpr float kPupilTone = 0.08f;
constexpr float kPupilFraction = 0.45f;
constexpr float kEyeHalfWidth = 0.42f;  // of the resolution

bool in_range(float v, float lo, float hi) { return v >= lo && v <= hi; }

}  // namespace

void SubjectParams::validate() const {
  if (!in_range(glare_prob, 0, 1) || !in_range(blink_prob, 0, 1) || !in_range(bias_weight, 0, 1))
    throw ConfigError("subject " + id + ": probabilities must lie in [0,1]");
  if (gain_x <= 0 || gain_y <= 0) throw ConfigError("subject " + id + ": gaze gain must be positive");
  if (iris_radius <= 0 || eye_open <= 0 || eye_open > 1 || bias_spread < 0)
    throw ConfigError("subject " + id + ": bad eye geometry");
}

void SyntheticEyeConfig::validate() const {
  if (resolution < 8) throw ConfigError("synthetic resolution must be at least 8");
  if (noise_std < 0) throw ConfigError("noise std must be non-negative");
  if (!(max_pitch > 0 && max_pitch < 1.5f && max_yaw > 0 && max_yaw < 1.5f))
    throw ConfigError("gaze range must lie in (0, 1.5) rad");
  if (subjects.empty()) throw ConfigError("synthetic config has no subjects");
  for (const auto& s : subjects) s.validate();
}

std::vector<SubjectParams> random_subjects(int n, uint64_t seed, int resolution) {
  if (n < 1) throw ConfigError("need at least one subject");
  std::vector<SubjectParams> out;
  const float r = static_cast<float>(resolution);
  for (int i = 0; i < n; ++i) {
    std::mt19937_64 rng(derive_seed({seed, 0x7375626Aull, static_cast<uint64_t>(i)}));
    auto u = [&](float lo, float hi) { return std::uniform_real_distribution<float>(lo, hi)(rng); };
    SubjectParams s;
    char id[16];
    std::snprintf(id, sizeof id, "s%02d", i);
    s.id = id;
    s.iris_radius = r * u(0.12f, 0.16f);
    s.eye_open = u(0.55f, 0.72f);
    s.gain_x = r * u(0.28f, 0.36f);
    s.gain_y = r * u(0.20f, 0.26f);
    s.offset_x = r * u(-0.015f, 0.015f);
    s.offset_y = r * u(-0.015f, 0.015f);
    s.skin = u(0.45f, 0.65f);
    s.iris_tone = u(0.25f, 0.45f);
    s.bias_pitch = u(-0.15f, 0.15f);
    s.bias_yaw = u(-0.25f, 0.25f);
    out.push_back(s);
  }
  return out;
}

SubjectParams heldout_subject(const std::string& id, uint64_t seed, int resolution) {
  SubjectParams s = random_subjects(1, seed, resolution)[0];
  const float r = static_cast<float>(resolution);
  s.id = id;
  s.heldout = true;
  s.offset_x = 0.06f * r;
  s.offset_y = -0.04f * r;
  s.bias_pitch = -0.1f;
  s.bias_yaw = 0.2f;
  s.skin = 0.35f;
  s.iris_tone = 0.5f;
  s.iris_radius = 0.18f * r;
  return s;
}

SynthRender render_eye(const SyntheticEyeConfig& cfg, const SubjectParams& s, float pitch, float yaw, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> uni(0.0f, 1.0f);
  const int res = cfg.resolution;
  const float c = 0.5f * static_cast<float>(res);
  const float a = kEyeHalfWidth * static_cast<float>(res), b = a * s.eye_open;

  SynthRender out;
  out.iris_x = c + s.gain_x * yaw + s.offset_x;
  out.iris_y = c - s.gain_y * pitch + s.offset_y;
  out.blink = uni(rng) < s.blink_prob;
  out.glare = uni(rng) < s.glare_prob;
  const float lid = out.blink ? (c - b) + uni(rng) * 1.8f * b : -1e9f;
  const float gx = out.iris_x + (uni(rng) - 0.5f) * s.iris_radius;
  const float gy = out.iris_y + (uni(rng) - 0.5f) * s.iris_radius;
  const float glare_sigma = 0.02f * static_cast<float>(res);
  const float pupil = kPupilFraction * s.iris_radius;

  auto shade = [&](float x, float y) {
    const float skin = s.skin + 0.08f * (y / static_cast<float>(res) - 0.5f);
    const float ex = (x - c) / a, ey = (y - c) / b;
    if (ex * ex + ey * ey > 1.0f) return skin;
    if (y < lid) return 0.9f * skin;
    const float dx = x - out.iris_x, dy = y - out.iris_y;
    const float d = std::sqrt(dx * dx + dy * dy);
    if (d <= pupil) return kPupilTone;
    if (d <= s.iris_radius) return s.iris_tone + 0.04f * std::cos(12.0f * std::atan2(dy, dx));
    return kScleraTone;
  };

  out.image = Tensor({1, res, res});
  std::normal_distribution<float> noise(0.0f, 1.0f);
  const float step = 1.0f / kSuper;
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x) {
      float acc = 0.0f;
      for (int sy = 0; sy < kSuper; ++sy)
        for (int sx = 0; sx < kSuper; ++sx)
          acc += shade(static_cast<float>(x) + (sx + 0.5f) * step, static_cast<float>(y) + (sy + 0.5f) * step);
      float v = acc / (kSuper * kSuper);
      const float px = static_cast<float>(x) + 0.5f, py = static_cast<float>(y) + 0.5f;
      if (out.glare) {
        const float r2 = ((px - gx) * (px - gx) + (py - gy) * (py - gy)) / (2.0f * glare_sigma * glare_sigma);
        v += 0.7f * std::exp(-r2);
      }
      if (cfg.noise_std > 0) v += cfg.noise_std * noise(rng);
      out.image[static_cast<size_t>(y * res + x)] = static_cast<float>(quantize_u8(v)) / 255.0f;
    }
  return out;
}

GazeDataset synth_dataset(const SyntheticEyeConfig& cfg, int n_per_subject) {
  cfg.validate();
  if (n_per_subject < 1) throw ConfigError("need at least one sample per subject");
  GazeDataset out;
  for (size_t si = 0; si < cfg.subjects.size(); ++si) {
    const auto& s = cfg.subjects[si];
    int personal = 0;
    for (int i = 0; i < n_per_subject; ++i) {
      const uint64_t seed = derive_seed({cfg.seed, static_cast<uint64_t>(si), static_cast<uint64_t>(i)});
      std::mt19937_64 rng(seed ^ 0x6C6162656Cull);
      std::uniform_real_distribution<float> uni(0.0f, 1.0f);
      float pitch, yaw;
      if (uni(rng) < s.bias_weight) {
        std::normal_distribution<float> np(s.bias_pitch, s.bias_spread), ny(s.bias_yaw, s.bias_spread);
        pitch = std::clamp(np(rng), -cfg.max_pitch, cfg.max_pitch);
        yaw = std::clamp(ny(rng), -cfg.max_yaw, cfg.max_yaw);
      } else {
        pitch = (2.0f * uni(rng) - 1.0f) * cfg.max_pitch;
        yaw = (2.0f * uni(rng) - 1.0f) * cfg.max_yaw;
      }
      GazeSample g;
      g.image = render_eye(cfg, s, pitch, yaw, seed).image;
      g.pitch = pitch;
      g.yaw = yaw;
      g.subject = s.id;
      g.split = s.heldout ? Split::Test : split_for(s.id, i);
      if (g.split == Split::Test && personal < 5) {
        g.split = Split::Personal;
        ++personal;
      }
      out.push_back(std::move(g));
    }
  }
  return out;
}

GazeDataset synth_generate(const SyntheticEyeConfig& cfg, int n_per_subject, const std::filesystem::path& out_dir) {
  GazeDataset data = synth_dataset(cfg, n_per_subject);
  std::filesystem::create_directories(out_dir / "images");
  std::vector<ManifestRecord> records;
  int within = 0;
  for (const auto& g : data) {
    char name[64];
    std::snprintf(name, sizeof name, "images/%s_%05d.pgm", g.subject.c_str(), within);
    write_pgm(out_dir / name, g.image);
    records.push_back({name, g.pitch, g.yaw, g.subject, g.split});
    if (++within == n_per_subject) within = 0;
  }
  write_manifest(out_dir / "manifest.jsonl", records);
  return data;
}

}  // namespace cgaze
