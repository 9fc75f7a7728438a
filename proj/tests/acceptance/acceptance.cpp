// Copyright (C) 2026 The cgaze Authors
// SPDX-License-Identifier: Apache-2.0

// End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails. Run a subset with criterion numbers
// as arguments, e.g. `cgaze_acceptance 1 6 8`.

#include <omp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cgaze/bench.hpp"
#include "cgaze/cli.hpp"
#include "cgaze/dataset.hpp"
#include "cgaze/detect.hpp"
#include "cgaze/distill.hpp"
#include "cgaze/gaze_train.hpp"
#include "cgaze/synth.hpp"
#include "cgaze/weights.hpp"
#include "support/detect_oracle.hpp"
#include "support/distill_oracle.hpp"
#include "support/gradcheck.hpp"

using namespace cgaze;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> details;

  void expect(bool ok, const std::string& what) {
    pass = pass && ok;
    details.push_back(std::string(ok ? "ok   " : "FAIL ") + what);
  }
  void note(const std::string& what) { details.push_back("     " + what); }
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string fmt(const char* f, double a, double b) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

std::string fmt(const char* f, double a, double b, double c) {
  char buf[200];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

bool within(double value, double target, double rel) { return std::abs(value - target) <= rel * target; }

// Shared between criteria 4 and 5: the distilled student and the gaze data.
struct Pipeline {
  bool ready = false;
  GazeModel teacher;
  GazeModel student;
  GazeDataset data;
  SyntheticEyeConfig synth;
};

Pipeline& pipeline() {
  static Pipeline p;
  if (!p.ready) {
    p.synth.resolution = 128;
    p.synth.seed = 7;
    p.synth.subjects = random_subjects(4, 1, 128);
    p.data = synth_dataset(p.synth, 500);
    p.teacher = build_teacher(1);
    p.student = build_student_from_teacher(p.teacher, 2);
    p.ready = true;
  }
  return p;
}

// ---------------------------------------------------------------------------

Outcome parameter_accounting() {
  Outcome o;
  GazeModel student = build_student_from_teacher(build_teacher(1), 2);
  const int64_t trunk = count_params(student, false);
  attach_adapters(student, 3);
  const int64_t total = count_params(student, false);
  const int64_t tunable = count_params(student, true);
  GazeModel teacher = build_teacher(1);
  const int64_t teacher_total = count_params(teacher, false);
  attach_adapters(teacher, 3);
  const int64_t teacher_adapters = count_params(teacher, true);

  o.expect(within(static_cast<double>(total), 281000, 0.05),
           "student trunk+head+adapters " + std::to_string(total) + " within 5% of 281,000 (trunk+head " +
               std::to_string(trunk) + ")");
  o.expect(within(static_cast<double>(tunable), 14430, 0.01),
           "student adapter tunable " + std::to_string(tunable) + " within 1% of 14,430");
  o.expect(within(static_cast<double>(teacher_adapters), 191700, 0.01),
           "teacher adapter tunable " + std::to_string(teacher_adapters) + " within 1% of 191,700");
  o.expect(within(static_cast<double>(teacher_total), 3.6e6, 0.10),
           "teacher total " + std::to_string(teacher_total) + " within 10% of 3.6M");
  return o;
}

Outcome gradient_suite() {
  Outcome o;
  for (const auto& suite : gradcheck::all_suites()) {
    double worst = 0.0;
    int cases = 0;
    bool ok = true;
    for (uint64_t seed = 0; seed < 20; ++seed) {
      const auto r = suite.run(seed);
      worst = std::max(worst, r.rel_err);
      ok = ok && r.coords > 0 && r.rel_err < gradcheck::kTolerance;
      ++cases;
    }
    o.expect(ok, suite.name + ": " + std::to_string(cases) + " cases, worst rel err " + fmt("%.2e", worst));
  }
  return o;
}

Outcome loss_oracle() {
  Outcome o;
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    oracle::DistillFixture f = oracle::small_fixture(1000 + static_cast<uint64_t>(trial));
    const int hw = 64 + 32 * static_cast<int>(rng() % 2);
    const int n = 1 + static_cast<int>(rng() % 3);
    const Tensor images = oracle::random_images(n, hw, rng);
    std::vector<MaskSpec> masks;
    const float ratio = 0.3f + 0.1f * static_cast<float>(rng() % 5);
    for (int i = 0; i < n; ++i) masks.push_back(generate_mask(hw / 32, hw / 32, ratio, rng()));
    const TeacherFeatures t = teacher_features(f.teacher, images);
    ag::Tape tape(false);
    ForwardCtx ctx{tape};
    const auto d = oracle::decode_all(f, images, masks, ctx);
    const double got = reconstruction_loss(images, d.f3, d.f4, t, f.decoders, masks, ctx).parts.total;
    const double want = oracle::loop_loss(d, images, t, masks);
    worst = std::max(worst, std::abs(got - want) / std::max(1e-12, std::abs(want)));
  }
  o.expect(worst <= 1e-5, "100 random cases vs loop oracle, worst rel diff " + fmt("%.2e", worst));

  oracle::DistillFixture f = oracle::small_fixture(77);
  const Tensor images = oracle::random_images(3, 96, rng);
  std::vector<MaskSpec> masks;
  for (int i = 0; i < 3; ++i) masks.push_back(generate_mask(3, 3, 0.6f, 50 + static_cast<uint64_t>(i)));
  const TeacherFeatures t = teacher_features(f.teacher, images);
  ag::Tape tape(false);
  ForwardCtx ctx{tape};
  const auto d = oracle::decode_all(f, images, masks, ctx);
  const double base = reconstruction_loss(images, d.f3, d.f4, t, f.decoders, masks, ctx).parts.total;

  Tensor img2 = images;
  const Tensor pix = batch_stage_mask(masks, 1, 96, 96);
  std::normal_distribution<float> n01;
  for (size_t k = 0; k < img2.size(); ++k)
    if (pix[k] == 0) img2[k] += 5.0f * n01(rng);
  TeacherFeatures t2 = t;
  for (auto [feat, stride] : {std::pair{&t2.f3, 16}, std::pair{&t2.f4, 32}}) {
    const Tensor m = batch_stage_mask(masks, stride, 96, 96);
    const int64_t C = feat->dim(1), S = feat->dim(2) * feat->dim(3);
    for (int64_t b = 0; b < feat->dim(0); ++b)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t s = 0; s < S; ++s)
          if (m[static_cast<size_t>(b * S + s)] == 0) (*feat)[static_cast<size_t>((b * C + c) * S + s)] += 3.0f * n01(rng);
  }
  const double perturbed = reconstruction_loss(img2, d.f3, d.f4, t2, f.decoders, masks, ctx).parts.total;
  o.expect(perturbed == base, "unmasked-position perturbation leaves the loss unchanged (" + fmt("%.9g", base) + ")");

  const double fixed = reconstruction_loss(d.image, d.f3, d.f4, TeacherFeatures{d.psi3, d.psi4}, f.decoders, masks, ctx)
                           .parts.total;
  o.expect(fixed == 0.0, "exact reconstruction gives loss " + fmt("%g", fixed));
  return o;
}

Outcome distillation_progress() {
  Outcome o;
  Pipeline& p = pipeline();
  const GazeDataset train = filter_split(p.data, Split::Train);
  std::vector<int64_t> rows(64);
  for (int i = 0; i < 64; ++i) rows[static_cast<size_t>(i)] = i * 7;
  const Tensor images = stack_images(train, rows);

  DistillDecoders dec = build_decoders(p.student.config, p.teacher.config, 5);
  prepare_distillation(p.teacher, p.student, dec);
  const uint64_t teacher_hash = hash_params(std::as_const(p.teacher).params());
  const uint64_t stage1_hash = hash_params(filter_params(std::as_const(p.student).params(), is_stage1_param));

  DistillState state{p.student, dec, AdamW(), 0};
  DistillConfig cfg;
  cfg.epochs = 25;
  cfg.batch_size = 8;
  const auto curve = distill_run(cfg, p.teacher, state, images);
  p.student = state.student;

  const double first = curve.front().total, last = curve.back().total;
  o.expect(curve.size() == 200, std::to_string(curve.size()) + " steps on 64 images at 128x128");
  o.expect(last <= 0.5 * first, "loss " + fmt("%.4f -> %.4f (%.1f%% reduction)", first, last, 100.0 * (1.0 - last / first)));
  o.expect(hash_params(std::as_const(p.teacher).params()) == teacher_hash, "teacher parameter hash unchanged");
  o.expect(hash_params(filter_params(std::as_const(p.student).params(), is_stage1_param)) == stage1_hash,
           "student stem + stage-1 parameter hash unchanged");

  // 20-step block means of the curve.
  std::string blocks;
  bool monotone = true;
  double prev = std::numeric_limits<double>::infinity();
  for (size_t b = 0; b + 20 <= curve.size(); b += 20) {
    double s = 0;
    for (size_t k = b; k < b + 20; ++k) s += curve[k].total;
    s /= 20.0;
    monotone = monotone && s <= prev;
    prev = s;
    blocks += fmt(" %.4f", s);
  }
  o.expect(monotone, "20-step block means non-increasing:" + blocks);
  return o;
}

Outcome end_to_end_gaze() {
  Outcome o;
  Pipeline& p = pipeline();
  const auto t0 = std::chrono::steady_clock::now();
  const GazeDataset train = filter_split(p.data, Split::Train), val = filter_split(p.data, Split::Val),
                    test = filter_split(p.data, Split::Test);
  GazeModel model = p.student;
  attach_adapters(model, 3);
  TrainConfig cfg;
  cfg.epochs = 10;
  const TrainReport rep = train_generalized(model, train, val, cfg);
  const double test_err = evaluate(model, test).mean_deg;
  o.note("generalized: " + std::to_string(train.size()) + " train images, best val " +
         fmt("%.3f deg at epoch %.0f", rep.best_val_mean_deg, rep.best_epoch));
  o.expect(test_err < 5.0, "held-out test mean angular error " + fmt("%.3f deg < 5", test_err));
  o.expect(rep.backbone_hash_before == rep.backbone_hash_after, "backbone hash unchanged by adapter training");

  SyntheticEyeConfig pc = p.synth;
  pc.subjects = {heldout_subject("p00", 5, pc.resolution)};
  pc.seed = 99;
  const GazeDataset subject = synth_dataset(pc, 105);
  PersonalizeData data;
  data.personal = filter_split(subject, Split::Personal);
  data.subject_holdout = filter_split(subject, Split::Test);
  data.replay = train;
  data.general_val = val;

  GazeModel personal = model;
  const PersonalizeReport pr = personalize(personal, data, cfg);
  const double test_after = evaluate(personal, test).mean_deg;
  const double subject_gain = 1.0 - pr.subject_after / pr.subject_before;
  o.note("personalize: " + std::to_string(pr.tunable_params) + " tunable, " + std::to_string(cfg.personal_epochs) +
         " steps of 5 shots + " + std::to_string(cfg.replay_r) + " replay");
  o.expect(subject_gain >= 0.10, "held-out subject " + fmt("%.3f -> %.3f deg (%.1f%% better)", pr.subject_before,
                                                           pr.subject_after, 100.0 * subject_gain));
  o.expect(test_after <= 1.2 * test_err,
           "generalized test " + fmt("%.3f -> %.3f deg (%+.1f%%)", test_err, test_after, 100.0 * (test_after / test_err - 1.0)));
  o.expect(pr.general_after <= 1.2 * pr.general_before,
           "generalized val " + fmt("%.3f -> %.3f deg (%+.1f%%)", pr.general_before, pr.general_after,
                                    100.0 * (pr.general_after / pr.general_before - 1.0)));

  GazeModel no_replay = model;
  TrainConfig off = cfg;
  off.replay_r = 0;
  PersonalizeData alone = data;
  alone.replay.clear();
  const PersonalizeReport ab = personalize(no_replay, alone, off);
  o.note("ablation without replay: subject " + fmt("%.3f deg, generalized val %.3f deg", ab.subject_after, ab.general_after));

  // CLI predict on a centred-gaze image of a training subject.
  const fs::path dir = fs::temp_directory_path() / "cgaze_acceptance";
  fs::create_directories(dir);
  SubjectParams centred = p.synth.subjects[0];
  centred.glare_prob = 0.0f;
  centred.blink_prob = 0.0f;
  write_pgm(dir / "centre.pgm", render_eye(p.synth, centred, 0.0f, 0.0f, 1).image);
  save_model(model, dir / "model.dftw");
  std::ostringstream out, err;
  const int code = run_cli({"predict", "--model", (dir / "model.dftw").string(), "--image", (dir / "centre.pgm").string()},
                           out, err);
  double pitch = 9, yaw = 9;
  std::sscanf(out.str().c_str(), "%lf,%lf", &pitch, &yaw);
  o.expect(code == 0 && std::abs(pitch) < 0.15 && std::abs(yaw) < 0.15,
           "cli predict on a centred gaze image: " + fmt("pitch %.4f, yaw %.4f rad", pitch, yaw));
  fs::remove_all(dir);
  o.note("elapsed " + fmt("%.0f s", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()));
  return o;
}

Outcome detection_equivalence() {
  Outcome o;
  std::mt19937 rng(606);
  int equal = 0, examined_ok = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const FeatureGrid g = oracle::random_grid(rng);
    const float gx = std::uniform_real_distribution<float>(-8.0f, static_cast<float>(g.width() * g.stride()) + 8.0f)(rng);
    const float gy = std::uniform_real_distribution<float>(-8.0f, static_cast<float>(g.height() * g.stride()) + 8.0f)(rng);
    const int k = static_cast<int>(rng() % 4);
    const DetectThresholds th{0.1f + 0.1f * static_cast<float>(rng() % 5), 0.3f + 0.1f * static_cast<float>(rng() % 6)};
    const Detection d = detect_at_gaze(g, gx, gy, k, th);
    equal += d.boxes == oracle::full_then_filter(g, gx, gy, k, th);
    examined_ok += d.cells_examined <= (2 * k + 1) * (2 * k + 1);
  }
  o.expect(equal == 1000, std::to_string(equal) + "/1000 grids: region detection == filtered full-grid pipeline");
  o.expect(examined_ok == 1000, "cells_examined <= (2k+1)^2 on every grid");

  int nms_equal = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    auto boxes = oracle::random_boxes(rng, 50, trial % 2 == 0);
    const float thr = std::uniform_real_distribution<float>(0.05f, 1.0f)(rng);
    const auto got = nms(boxes, thr, 64);
    std::shuffle(boxes.begin(), boxes.end(), rng);
    nms_equal += got == oracle::brute_nms(boxes, thr, 64) && got == nms(boxes, thr, 64);
  }
  o.expect(nms_equal == 1000, std::to_string(nms_equal) + "/1000 random 50-box sets: NMS == O(n^2) oracle, order-invariant");

  Tensor cold({7, 60, 80}, 0.0f);
  const Detection d = detect_at_gaze(FeatureGrid(cold, 8), 320, 240, 2);
  o.expect(d.cells_examined == 25 && d.cells_total == 4800,
           "interior k=2 on 80x60: " + std::to_string(d.cells_examined) + " of " + std::to_string(d.cells_total) +
               " cells" + fmt(" (%.2f%%)", 100.0 * static_cast<double>(d.cells_examined) / static_cast<double>(d.cells_total)));
  return o;
}

Outcome latency_ordering() {
  Outcome o;
  const GazeModel teacher = build_teacher(1);
  const GazeModel student = build_student_from_teacher(teacher, 2);
  const Shape in{1, 1, 128, 128};
  std::vector<double> ratios;
  for (int session = 0; session < 3; ++session) {
    const LatencyOptions opt{1000, 20, 1, static_cast<uint64_t>(session)};
    const LatencyReport t = measure_latency(teacher, "teacher", in, opt);
    const LatencyReport s = measure_latency(student, "student", in, opt);
    const LatencyComparison c = compare(t, s);
    ratios.push_back(c.ratio);
    o.note(fmt("session %.0f: teacher %.3f ms, student %.3f ms", session + 1, t.mean_ms, s.mean_ms) +
           fmt(", p99 %.3f / %.3f ms", t.p99_ms, s.p99_ms));
    if (session == 0) {
      o.expect(c.ratio < 0.7, "student/teacher mean latency " + fmt("%.3f < 0.7 over 1000 batch-1 runs", c.ratio));
      o.note("host: " + t.host + ", threads 1, input 128x128");
    }
  }
  const double lo = *std::min_element(ratios.begin(), ratios.end()), hi = *std::max_element(ratios.begin(), ratios.end());
  o.note("ratio across 3 sessions " + fmt("%.3f .. %.3f", lo, hi) + fmt(" (spread %.1f%%)", 100.0 * (hi / lo - 1.0)));
  return o;
}

Outcome persistence() {
  Outcome o;
  const fs::path dir = fs::temp_directory_path() / "cgaze_acceptance_io";
  fs::create_directories(dir);
  GazeModel m = build_student_from_teacher(build_teacher(1), 2);
  attach_adapters(m, 3);
  std::mt19937_64 rng(8);
  std::normal_distribution<float> n01;
  for (auto* p : m.params())
    for (float& v : p->value.values()) v = n01(rng);
  save_model(m, dir / "w.dftw");
  const GazeModel back = load_model(dir / "w.dftw");
  bool equal = back.params().size() == std::as_const(m).params().size();
  for (size_t k = 0; equal && k < back.params().size(); ++k) {
    const auto* a = back.params()[k];
    const auto* b = std::as_const(m).params()[k];
    equal = a->name == b->name && a->value.shape() == b->value.shape() &&
            std::memcmp(a->value.values().data(), b->value.values().data(), a->value.size() * sizeof(float)) == 0;
  }
  o.expect(equal, "save/load roundtrip bit-exact over " + std::to_string(back.params().size()) + " tensors");

  std::ifstream f(dir / "w.dftw", std::ios::binary);
  std::vector<char> bytes{std::istreambuf_iterator<char>(f), {}};
  int detected = 0;
  for (int t = 0; t < 100; ++t) {
    auto bad = bytes;
    bad[12 + rng() % (bad.size() - 16)] ^= static_cast<char>(1 << (rng() % 8));
    std::ofstream(dir / "bad.dftw", std::ios::binary).write(bad.data(), static_cast<std::streamsize>(bad.size()));
    try {
      (void)load_model(dir / "bad.dftw");
    } catch (const CorruptionError&) {
      ++detected;
    }
  }
  o.expect(detected == 100, std::to_string(detected) + "/100 single-bit payload flips rejected by CRC");
  fs::remove_all(dir);

  const double e0 = angular_error(0.2, -0.3, 0.2, -0.3), e90 = angular_error(0, 0, 0, std::numbers::pi / 2),
               e57 = angular_error(0, 0, 0, 0.1);
  o.expect(std::abs(e0) < 1e-6 && std::abs(e90 - 90.0) < 1e-9 && std::abs(e57 - 5.7296) < 1e-3,
           "angular_error cases " + fmt("%.6f, %.6f, %.6f deg", e0, e90, e57));
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  omp_set_num_threads(1);
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> all{
      {1, "parameter accounting", parameter_accounting},
      {2, "gradient suite", gradient_suite},
      {3, "reconstruction loss oracle", loss_oracle},
      {4, "distillation progress", distillation_progress},
      {5, "end-to-end synthetic gaze", end_to_end_gaze},
      {6, "detection equivalence", detection_equivalence},
      {7, "latency ordering", latency_ordering},
      {8, "persistence", persistence},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  int failed = 0;
  std::vector<std::string> summary;
  for (const auto& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.expect(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    char line[200];
    std::snprintf(line, sizeof line, "%s %d %s (%.1f s)", o.pass ? "PASS" : "FAIL", c.id, c.name, secs);
    std::printf("%s\n", line);
    for (const auto& d : o.details) std::printf("       %s\n", d.c_str());
    std::fflush(stdout);
    summary.push_back(line);
    failed += !o.pass;
  }
  std::printf("\nsummary\n");
  for (const auto& s : summary) std::printf("  %s\n", s.c_str());
  std::printf("%d of %zu criteria failed\n", failed, summary.size());
  return failed == 0 ? 0 : 1;
}
