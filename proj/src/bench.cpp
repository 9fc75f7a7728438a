// Copyright (C) 2026 The cgaze Authors
// SPDX-License-Identifier: Apache-2.0

#include "cgaze/bench.hpp"

#include <omp.h>
#include <sys/utsname.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "json.hpp"

namespace cgaze {

namespace {

double percentile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const size_t lo = static_cast<size_t>(std::floor(pos));
  const size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

LatencyReport summarize_latency(std::string name, const std::vector<double>& run_ms, int warmup, int threads) {
  if (run_ms.empty()) throw ConfigError("latency summary needs at least one run");
  LatencyReport r;
  r.name = std::move(name);
  r.n_runs = static_cast<int>(run_ms.size());
  r.warmup = warmup;
  r.threads = threads;
  r.host = host_descriptor();
  double s = 0;
  for (double v : run_ms) s += v;
  r.mean_ms = s / static_cast<double>(run_ms.size());
  double ss = 0;
  for (double v : run_ms) ss += (v - r.mean_ms) * (v - r.mean_ms);
  r.std_ms = std::sqrt(ss / static_cast<double>(run_ms.size()));
  std::vector<double> sorted = run_ms;
  std::sort(sorted.begin(), sorted.end());
  r.p50_ms = percentile(sorted, 0.50);
  r.p99_ms = percentile(sorted, 0.99);
  return r;
}

LatencyReport measure_latency(const GazeModel& model, const std::string& name, const Shape& input_shape,
                              const LatencyOptions& opt, std::vector<double>* run_ms) {
  if (opt.n_runs < 1) throw ConfigError("n_runs must be >= 1");
  if (opt.warmup < 0) throw ConfigError("warmup must be >= 0");
  if (opt.threads < 1) throw ConfigError("threads must be >= 1");
  if (input_shape.size() != 4 || input_shape[0] != 1) throw ConfigError("latency input must be (1,C,H,W)");

  Tensor x(input_shape);
  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (float& v : x.values()) v = u(rng);

  const int saved = omp_get_max_threads();
  omp_set_num_threads(opt.threads);
  for (int k = 0; k < opt.warmup; ++k) (void)predict_gaze(model, x);
  std::vector<double> times;
  times.reserve(static_cast<size_t>(opt.n_runs));
  for (int k = 0; k < opt.n_runs; ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    (void)predict_gaze(model, x);
    times.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  omp_set_num_threads(saved);
  if (run_ms) *run_ms = times;
  return summarize_latency(name, times, opt.warmup, opt.threads);
}

std::string host_descriptor() {
  std::string cpu;
  std::ifstream info("/proc/cpuinfo");
  for (std::string line; std::getline(info, line);)
    if (line.rfind("model name", 0) == 0) {
      cpu = line.substr(line.find(':') + 2);
      break;
    }
  utsname u{};
  std::string sys = uname(&u) == 0 ? std::string(u.sysname) + " " + u.machine : "unknown";
  return cpu.empty() ? sys : sys + ", " + cpu;
}

std::string to_json(const LatencyReport& r) {
  nlohmann::ordered_json j;
  j["name"] = r.name;
  j["n_runs"] = r.n_runs;
  j["warmup"] = r.warmup;
  j["mean_ms"] = r.mean_ms;
  j["std_ms"] = r.std_ms;
  j["p50_ms"] = r.p50_ms;
  j["p99_ms"] = r.p99_ms;
  j["host"] = r.host;
  j["threads"] = r.threads;
  return j.dump(2);
}

LatencyReport latency_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    LatencyReport r;
    r.name = j.at("name").get<std::string>();
    r.n_runs = j.at("n_runs").get<int>();
    r.warmup = j.at("warmup").get<int>();
    r.mean_ms = j.at("mean_ms").get<double>();
    r.std_ms = j.at("std_ms").get<double>();
    r.p50_ms = j.at("p50_ms").get<double>();
    r.p99_ms = j.at("p99_ms").get<double>();
    r.host = j.at("host").get<std::string>();
    r.threads = j.at("threads").get<int>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed latency report: ") + e.what());
  }
}

void write_runs_csv(const std::filesystem::path& path, const std::vector<double>& run_ms) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "run,latency_ms\n";
  char buf[64];
  for (size_t k = 0; k < run_ms.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f\n", k, run_ms[k]);
    out << buf;
  }
}

LatencyComparison compare(const LatencyReport& a, const LatencyReport& b) {
  if (!(a.mean_ms > 0)) throw ConfigError("reference report has non-positive mean");
  LatencyComparison c;
  c.ratio = b.mean_ms / a.mean_ms;
  char buf[256];
  std::string t = "model                 runs    mean_ms     std_ms     p50_ms     p99_ms\n";
  for (const LatencyReport* r : {&a, &b}) {
    std::snprintf(buf, sizeof buf, "%-20s %5d %10.3f %10.3f %10.3f %10.3f\n", r->name.c_str(), r->n_runs, r->mean_ms,
                  r->std_ms, r->p50_ms, r->p99_ms);
    t += buf;
  }
  std::snprintf(buf, sizeof buf, "ratio %s/%s = %.3f\n", b.name.c_str(), a.name.c_str(), c.ratio);
  c.table = t + buf;
  return c;
}

}  // namespace cgaze
