// Copyright (C) 2026 The cgaze Authors
// SPDX-License-Identifier: Apache-2.0

#include "cgaze/cli.hpp"

#include <cstdio>
#include <fstream>
#include <optional>

#include "CLI11.hpp"
#include "cgaze/bench.hpp"
#include "cgaze/dataset.hpp"
#include "cgaze/detect.hpp"
#include "cgaze/distill.hpp"
#include "cgaze/gaze_train.hpp"
#include "cgaze/rng.hpp"
#include "cgaze/synth.hpp"
#include "cgaze/weights.hpp"

namespace cgaze {

namespace {

struct Flags {
  uint64_t seed = 0;
  int resolution = 0;

  std::string out, data, model, teacher, teacher_out, personal, replay, subject, report, image, grid, gaze,
      json, csv, baseline, checkpoint, log, config;
  int subjects = 4, per_subject = 500, holdout = 0;
  int epochs = -1, batch_size = -1, k = 2, runs = 1000, warmup = 20, threads = 1, stride = 0, replay_r = -1;
  float mask_ratio = 0.6f, lr = -1.0f, iou = 0.5f, score = 0.25f;
  std::string split;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

GazeModel fresh_student(uint64_t seed) {
  const GazeModel teacher = build_teacher(derive_seed({seed, 1}));
  return build_student_from_teacher(teacher, derive_seed({seed, 2}));
}

LoadOptions load_opts(const Flags& f) {
  LoadOptions o;
  o.resolution = f.resolution;
  return o;
}

TrainConfig train_config(const Flags& f) {
  TrainConfig cfg;
  if (!f.config.empty()) cfg = read_train_config(f.config);
  cfg.seed = f.seed;
  if (f.epochs >= 0) cfg.epochs = f.epochs;
  if (f.lr > 0) cfg.lr = f.lr;
  if (f.batch_size > 0) cfg.batch_size = f.batch_size;
  if (f.replay_r >= 0) cfg.replay_r = f.replay_r;
  return cfg;
}

int cmd_synth(const Flags& f, std::ostream& out) {
  SyntheticEyeConfig cfg;
  cfg.resolution = f.resolution > 0 ? f.resolution : 64;
  cfg.seed = f.seed;
  cfg.subjects = random_subjects(f.subjects, f.seed, cfg.resolution);
  for (int h = 0; h < f.holdout; ++h) {
    char id[16];
    std::snprintf(id, sizeof id, "p%02d", h);
    cfg.subjects.push_back(heldout_subject(id, derive_seed({f.seed, 0x686F6C64ull, static_cast<uint64_t>(h)}),
                                           cfg.resolution));
  }
  const GazeDataset d = synth_generate(cfg, f.per_subject, f.out);
  out << "wrote " << d.size() << " images to " << f.out << "\n";
  return kExitOk;
}

int cmd_distill(const Flags& f, std::ostream& out) {
  const GazeDataset data = load_dataset(f.data, load_opts(f));
  const GazeDataset train = filter_split(data, Split::Train);
  if (train.empty()) throw DataError("empty dataset");
  GazeModel teacher = f.teacher.empty() ? build_teacher(derive_seed({f.seed, 1})) : load_model(f.teacher);
  if (!f.teacher_out.empty()) save_model(teacher, f.teacher_out);

  DistillConfig cfg;
  cfg.seed = f.seed;
  cfg.mask_ratio = f.mask_ratio;
  if (f.epochs >= 0) cfg.epochs = f.epochs;
  if (f.lr > 0) cfg.lr = f.lr;
  if (f.batch_size > 0) cfg.batch_size = f.batch_size;

  std::optional<DistillState> state;
  if (!f.checkpoint.empty() && std::filesystem::exists(f.checkpoint)) {
    state = load_checkpoint(f.checkpoint);
    prepare_distillation(teacher, state->student, state->decoders);
  } else {
    GazeModel student = build_student_from_teacher(teacher, derive_seed({f.seed, 2}));
    DistillDecoders dec = build_decoders(student.config, teacher.config, derive_seed({f.seed, 3}));
    prepare_distillation(teacher, student, dec);
    state = DistillState{std::move(student), std::move(dec), AdamW(cfg.optim), 0};
  }
  DistillRunOptions opt;
  if (!f.log.empty()) opt.log_csv = f.log;
  if (!f.checkpoint.empty()) opt.checkpoint = f.checkpoint;
  const auto curve = distill_run(cfg, teacher, *state, stack_images(train, all_rows(train)), opt);
  if (!curve.empty())
    out << "steps " << curve.size() << " loss " << fmt("%.5f", curve.front().total) << " -> "
        << fmt("%.5f", curve.back().total) << "\n";
  save_model(state->student, f.out);
  return kExitOk;
}

int cmd_train(const Flags& f, std::ostream& out) {
  const GazeDataset data = load_dataset(f.data, load_opts(f));
  const GazeDataset train = filter_split(data, Split::Train), val = filter_split(data, Split::Val);
  if (train.empty() || val.empty()) throw DataError("empty dataset");
  GazeModel model = f.model.empty() ? fresh_student(f.seed) : load_model(f.model);
  if (!model.has_adapters()) attach_adapters(model, derive_seed({f.seed, 4}));
  const TrainReport rep = train_generalized(model, train, val, train_config(f), [&](int e, double err) {
    out << "epoch " << e << " val_mean_deg " << fmt("%.3f", err) << "\n";
  });
  out << "best_epoch " << rep.best_epoch << " val_mean_deg " << fmt("%.3f", rep.best_val_mean_deg)
      << " tunable_params " << rep.tunable_params << "\n";
  save_model(model, f.out);
  return kExitOk;
}

int cmd_personalize(const Flags& f, std::ostream& out) {
  const GazeDataset subject = filter_subject(load_dataset(f.personal, load_opts(f)), f.subject);
  if (subject.empty()) throw DataError("no samples for subject '" + f.subject + "'");
  PersonalizeData data;
  const bool tagged = !filter_split(subject, Split::Personal).empty();
  for (size_t k = 0; k < subject.size(); ++k) {
    const bool shot = tagged ? subject[k].split == Split::Personal : k < 5;
    (shot ? data.personal : data.subject_holdout).push_back(subject[k]);
  }
  const GazeDataset replay = load_dataset(f.replay, load_opts(f));
  data.replay = filter_split(replay, Split::Train);
  data.general_val = filter_split(replay, Split::Val);

  GazeModel model = load_model(f.model);
  TrainConfig cfg = train_config(f);
  if (f.epochs >= 0) cfg.personal_epochs = f.epochs;
  if (f.lr > 0) cfg.personal_lr = f.lr;
  const PersonalizeReport r = personalize(model, data, cfg);
  out << "personal_deg " << fmt("%.3f", r.personal_before) << " -> " << fmt("%.3f", r.personal_after) << "\n";
  if (!data.subject_holdout.empty())
    out << "subject_deg " << fmt("%.3f", r.subject_before) << " -> " << fmt("%.3f", r.subject_after) << "\n";
  if (!data.general_val.empty())
    out << "general_deg " << fmt("%.3f", r.general_before) << " -> " << fmt("%.3f", r.general_after) << "\n";
  save_model(model, f.out);
  return kExitOk;
}

int cmd_eval(const Flags& f, std::ostream& out) {
  LoadOptions o = load_opts(f);
  if (!f.split.empty()) o.split = parse_split(f.split);
  const GazeDataset data = load_dataset(f.data, o);
  const GazeModel model = load_model(f.model);
  const EvalReport r = evaluate(model, data);
  if (!f.report.empty()) write_eval_csv(r, f.report);
  out << "n " << r.n << " mean_deg " << fmt("%.3f", r.mean_deg) << " median_deg " << fmt("%.3f", r.median_deg)
      << "\n";
  return kExitOk;
}

int cmd_predict(const Flags& f, std::ostream& out) {
  const GazeModel model = load_model(f.model);
  Tensor img = read_image(f.image);
  if (f.resolution > 0) img = resize_bilinear(img, f.resolution, f.resolution);
  const Tensor x = img.reshaped({1, img.dim(0), img.dim(1), img.dim(2)});
  const Tensor y = predict_gaze(model, x);
  out << fmt("%.6f", y[0]) << "," << fmt("%.6f", y[1]) << "\n";
  return kExitOk;
}

int cmd_detect(const Flags& f, std::ostream& out, std::ostream& err) {
  const auto comma = f.gaze.find(',');
  if (comma == std::string::npos) throw CLI::ValidationError("--gaze", "expected X,Y");
  float gx = 0, gy = 0;
  try {
    gx = std::stof(f.gaze.substr(0, comma));
    gy = std::stof(f.gaze.substr(comma + 1));
  } catch (const std::exception&) {
    throw CLI::ValidationError("--gaze", "expected X,Y");
  }
  const FeatureGrid grid = read_grid(f.grid, f.stride > 0 ? std::optional<int>(f.stride) : std::nullopt);
  const Detection d = detect_at_gaze(grid, gx, gy, f.k, {f.score, f.iou});
  if (d.gaze.clamped) err << "warning: gaze outside the image, clamped to cell (" << d.gaze.cell.i << ","
                          << d.gaze.cell.j << ")\n";
  for (const auto& b : d.boxes) out << to_json_line(b) << "\n";
  err << "cells_examined " << d.cells_examined << " of " << d.cells_total << "\n";
  return kExitOk;
}

int cmd_bench(const Flags& f, std::ostream& out) {
  const int res = f.resolution > 0 ? f.resolution : 128;
  LatencyOptions opt{f.runs, f.warmup, f.threads, f.seed};
  auto run = [&](const std::string& path, const std::string& name, const std::string& csv) {
    const GazeModel m = load_model(path);
    std::vector<double> runs;
    const LatencyReport r = measure_latency(m, name, {1, m.config.in_channels, res, res}, opt, &runs);
    if (!csv.empty()) write_runs_csv(csv, runs);
    return r;
  };
  const LatencyReport r = run(f.model, std::filesystem::path(f.model).stem().string(), f.csv);
  if (!f.json.empty()) {
    std::ofstream j(f.json);
    if (!j) throw DataError("cannot write " + f.json);
    j << to_json(r) << "\n";
  }
  if (f.baseline.empty()) {
    out << to_json(r) << "\n";
  } else {
    const LatencyReport base = run(f.baseline, std::filesystem::path(f.baseline).stem().string(), "");
    out << compare(base, r).table;
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Flags f;
  CLI::App app{"cgaze: compact gaze estimation and gaze-directed detection", "cgaze"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  auto seeded = [&](CLI::App* c) {
    c->add_option("--seed", f.seed, "random seed");
    return c;
  };
  auto* synth = seeded(app.add_subcommand("synth", "render a synthetic eye dataset"));
  synth->add_option("--out", f.out, "output directory")->required();
  synth->add_option("--subjects", f.subjects)->check(CLI::PositiveNumber);
  synth->add_option("--per-subject", f.per_subject)->check(CLI::PositiveNumber);
  synth->add_option("--holdout", f.holdout, "extra held-out subjects p00..")->check(CLI::NonNegativeNumber);
  synth->add_option("--resolution", f.resolution, "image side (default 64)")->check(CLI::PositiveNumber);

  auto* distill = seeded(app.add_subcommand("distill", "distill a student from a teacher"));
  distill->add_option("--data", f.data, "manifest")->required();
  distill->add_option("--teacher", f.teacher, "teacher weights (default: seeded initialization)");
  distill->add_option("--teacher-out", f.teacher_out, "write the teacher used");
  distill->add_option("--out", f.out, "student weights")->required();
  distill->add_option("--epochs", f.epochs)->check(CLI::NonNegativeNumber);
  distill->add_option("--mask-ratio", f.mask_ratio)->check(CLI::Range(0.0f, 0.99f));
  distill->add_option("--lr", f.lr);
  distill->add_option("--batch-size", f.batch_size);
  distill->add_option("--checkpoint", f.checkpoint, "resume from / save to");
  distill->add_option("--log", f.log, "loss CSV");
  distill->add_option("--resolution", f.resolution);

  auto* train = seeded(app.add_subcommand("train", "generalized adapter training"));
  train->add_option("--data", f.data)->required();
  train->add_option("--model", f.model, "student weights (default: seeded initialization)");
  train->add_option("--out", f.out)->required();
  train->add_option("--lr", f.lr);
  train->add_option("--epochs", f.epochs)->check(CLI::NonNegativeNumber);
  train->add_option("--batch-size", f.batch_size);
  train->add_option("--config", f.config, "key=value training config");
  train->add_option("--resolution", f.resolution);

  auto* pers = seeded(app.add_subcommand("personalize", "five-shot personalization"));
  pers->add_option("--model", f.model)->required();
  pers->add_option("--personal", f.personal)->required();
  pers->add_option("--replay", f.replay)->required();
  pers->add_option("--subject", f.subject)->required();
  pers->add_option("--out", f.out)->required();
  pers->add_option("--epochs", f.epochs)->check(CLI::NonNegativeNumber);
  pers->add_option("--lr", f.lr);
  pers->add_option("--replay-r", f.replay_r)->check(CLI::NonNegativeNumber);
  pers->add_option("--config", f.config);
  pers->add_option("--resolution", f.resolution);

  auto* eval = seeded(app.add_subcommand("eval", "mean angular error"));
  eval->add_option("--model", f.model)->required();
  eval->add_option("--data", f.data)->required();
  eval->add_option("--report", f.report, "per-subject CSV");
  eval->add_option("--split", f.split, "train|val|test|personal");
  eval->add_option("--resolution", f.resolution);

  auto* predict = seeded(app.add_subcommand("predict", "print pitch,yaw in radians"));
  predict->add_option("--model", f.model)->required();
  predict->add_option("--image", f.image)->required();
  predict->add_option("--resolution", f.resolution);

  auto* detect = seeded(app.add_subcommand("detect", "gaze-directed detections as JSON lines"));
  detect->add_option("--grid", f.grid)->required();
  detect->add_option("--gaze", f.gaze, "X,Y pixels")->required();
  detect->add_option("--k", f.k)->check(CLI::NonNegativeNumber);
  detect->add_option("--iou", f.iou);
  detect->add_option("--score", f.score);
  detect->add_option("--stride", f.stride, "override the stored stride");

  auto* bench = seeded(app.add_subcommand("bench", "batch-1 forward latency"));
  bench->add_option("--model", f.model)->required();
  bench->add_option("--runs", f.runs)->check(CLI::PositiveNumber);
  bench->add_option("--warmup", f.warmup)->check(CLI::NonNegativeNumber);
  bench->add_option("--threads", f.threads)->check(CLI::PositiveNumber);
  bench->add_option("--json", f.json);
  bench->add_option("--csv", f.csv, "per-run latencies");
  bench->add_option("--baseline", f.baseline, "second model; prints the comparison table");
  bench->add_option("--resolution", f.resolution, "input side (default 128)");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << "run with --help for usage\n";
    return kExitUsage;
  }

  try {
    if (synth->parsed()) return cmd_synth(f, out);
    if (distill->parsed()) return cmd_distill(f, out);
    if (train->parsed()) return cmd_train(f, out);
    if (pers->parsed()) return cmd_personalize(f, out);
    if (eval->parsed()) return cmd_eval(f, out);
    if (predict->parsed()) return cmd_predict(f, out);
    if (detect->parsed()) return cmd_detect(f, out, err);
    if (bench->parsed()) return cmd_bench(f, out);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace cgaze
