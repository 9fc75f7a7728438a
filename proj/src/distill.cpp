// Copyright (C) 2026 The cgaze Authors
// SPDX-License-Identifier: Apache-2.0

#include "cgaze/distill.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "cgaze/rng.hpp"
#include "cgaze/weights.hpp"

namespace cgaze {

namespace {

constexpr int64_t kTeacherChunk = 16;

bool student_trainable(const std::string& name) { return !is_stage1_param(name) && !is_head_param(name); }

ParamRefs training_params(GazeModel& student, DistillDecoders& decoders) {
  ParamRefs ps = student.params();
  for (auto* p : decoders.params()) ps.push_back(p);
  return ps;
}

void freeze_student(GazeModel& student, DistillDecoders& decoders) {
  set_trainable(student.params(), student_trainable);
  for (auto* p : decoders.params()) p->trainable = !p->buffer;
  for (auto* p : student.params())
    if (p->buffer) p->trainable = false;
}

Tensor stage_mask_for(std::span<const MaskSpec> masks, const Tensor& images, const ag::Var& f) {
  const int h = static_cast<int>(images.dim(2)), w = static_cast<int>(images.dim(3));
  const int stride = static_cast<int>(images.dim(2) / f->val().dim(2));
  return batch_stage_mask(masks, stride, h, w);
}

}  // namespace

TeacherFeatures teacher_features(const GazeModel& teacher, const Tensor& images) {
  std::vector<Tensor> f3, f4;
  for (int64_t b = 0; b < images.dim(0); b += kTeacherChunk) {
    ag::Tape tape(false);
    ForwardCtx ctx{tape};
    const Tensor chunk = images.slice_batch(b, std::min(images.dim(0), b + kTeacherChunk));
    StageFeatures f = forward_features(teacher, ag::constant(chunk), {}, ctx);
    f3.push_back(f.f[2]->value);
    f4.push_back(f.f[3]->value);
  }
  return {stack_batch(f3), stack_batch(f4)};
}

ReconstructionLoss reconstruction_loss(const Tensor& images, const ag::Var& f3s, const ag::Var& f4s,
                                       const TeacherFeatures& teacher, const DistillDecoders& decoders,
                                       std::span<const MaskSpec> masks, ForwardCtx& ctx) {
  if (static_cast<int64_t>(masks.size()) != images.dim(0))
    throw ConfigError("reconstruction_loss: need one mask per image");
  const Tensor pix = batch_stage_mask(masks, 1, static_cast<int>(images.dim(2)), static_cast<int>(images.dim(3)));
  ag::Var img = ag::masked_mse(decode_image(decoders.image, f4s, ctx), ag::constant(images), pix);
  ag::Var feat3 = ag::masked_mse(decode_psi(decoders.psi3, f3s, ctx), ag::constant(teacher.f3),
                                 stage_mask_for(masks, images, f3s));
  ag::Var feat4 = ag::masked_mse(decode_psi(decoders.psi4, f4s, ctx), ag::constant(teacher.f4),
                                 stage_mask_for(masks, images, f4s));
  ReconstructionLoss out;
  out.total = ag::weighted_sum({{1.0f, img}, {kFeatureLossWeight, feat3}, {kFeatureLossWeight, feat4}});
  out.parts.img = img->value[0];
  out.parts.feat3 = feat3->value[0];
  out.parts.feat4 = feat4->value[0];
  out.parts.total = out.total->value[0];
  return out;
}

void prepare_distillation(GazeModel& teacher, GazeModel& student, DistillDecoders& decoders) {
  for (auto* p : teacher.params()) p->trainable = false;
  freeze_student(student, decoders);
}

void check_distill_freeze(const GazeModel& teacher, const GazeModel& student) {
  for (const auto* p : teacher.params())
    if (p->trainable) throw InternalError("teacher parameter '" + p->name + "' is trainable");
  for (const auto* p : student.params())
    if (p->trainable && !student_trainable(p->name))
      throw InternalError("student parameter '" + p->name + "' must stay frozen");
}

LossParts distill_step(const GazeModel& teacher, GazeModel& student, DistillDecoders& decoders,
                       const Tensor& images, std::span<const MaskSpec> masks, AdamW& optimizer,
                       float lr, const TeacherFeatures* cached) {
  check_distill_freeze(teacher, student);
  TeacherFeatures computed;
  if (!cached) {
    computed = teacher_features(teacher, images);
    cached = &computed;
  }

  ag::Tape tape;
  std::vector<BnUpdate> bn;
  ForwardCtx ctx{tape, true, &bn};
  StageFeatures f = forward_features(student, ag::constant(images), masks, ctx);
  ReconstructionLoss loss = reconstruction_loss(images, f.f[2], f.f[3], *cached, decoders, masks, ctx);
  if (!std::isfinite(loss.parts.total)) throw InternalError("distillation loss is not finite");
  ag::backward(loss.total);

  for (const auto* p : student.params())
    if (!p->trainable && tape.grad_of(*p))
      throw InternalError("frozen parameter '" + p->name + "' received a gradient");

  ParamRefs ps = training_params(student, decoders);
  tape.write_grads(ps);
  optimizer.step(ps, lr);
  for (auto* p : ps) p->zero_grad();
  apply_bn_updates(ps, bn);
  return loss.parts;
}

std::vector<MaskSpec> step_masks(const DistillConfig& cfg, int64_t step, int n, int h, int w) {
  if (h % cfg.patch_size != 0 || w % cfg.patch_size != 0)
    throw ConfigError("image " + std::to_string(h) + "x" + std::to_string(w) + " is not a multiple of the mask patch " +
                      std::to_string(cfg.patch_size));
  std::vector<MaskSpec> masks;
  masks.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    masks.push_back(generate_mask(h / cfg.patch_size, w / cfg.patch_size, cfg.mask_ratio,
                                  derive_seed({cfg.seed, 0x6D61736Bull, static_cast<uint64_t>(step),
                                               static_cast<uint64_t>(i)}),
                                  cfg.patch_size));
  return masks;
}

void save_checkpoint(const DistillState& state, const std::filesystem::path& path) {
  NamedTensors t;
  for (const auto* p : state.student.params()) t.emplace_back(p->name, p->value);
  for (const auto* p : state.decoders.params()) t.emplace_back(p->name, p->value);
  for (auto& e : state.optimizer.state()) t.push_back(std::move(e));
  write_tensors(path, t);
}

DistillState load_checkpoint(const std::filesystem::path& path, const AdamWConfig& optim) {
  const NamedTensors all = read_tensors(path);
  NamedTensors dec, opt;
  for (const auto& e : all) {
    if (e.first.rfind("decoder.", 0) == 0) dec.push_back(e);
    if (e.first.rfind("optim.", 0) == 0) opt.push_back(e);
  }
  DistillState s{model_from_tensors(all), {}, AdamW(optim), 0};
  ModelConfig teacher_dims = s.student.config;
  for (const auto& [name, t] : dec) {
    if (name == "decoder.psi3.fc.weight") teacher_dims.stage_dims[2] = static_cast<int>(t.dim(0));
    if (name == "decoder.psi4.fc.weight") teacher_dims.stage_dims[3] = static_cast<int>(t.dim(0));
  }
  s.decoders = build_decoders(s.student.config, teacher_dims, 0);
  load_weights(s.decoders.params(), dec, LoadMode::Strict);
  s.optimizer.load_state(opt);
  s.step = s.optimizer.steps();
  return s;
}

std::vector<LossParts> distill_run(const DistillConfig& cfg, const GazeModel& teacher, DistillState& state,
                                   const Tensor& images, const DistillRunOptions& options) {
  if (images.ndim() != 4 || images.dim(0) == 0) throw DataError("distill_run: empty dataset");
  if (cfg.batch_size < 1 || cfg.epochs < 0) throw ConfigError("distill_run: bad batch size or epoch count");
  freeze_student(state.student, state.decoders);
  check_distill_freeze(teacher, state.student);

  const int64_t n = images.dim(0);
  const int64_t per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const int h = static_cast<int>(images.dim(2)), w = static_cast<int>(images.dim(3));
  const TeacherFeatures all = teacher_features(teacher, images);

  std::ofstream log;
  if (options.log_csv) {
    const bool append = state.step > 0 && std::filesystem::exists(*options.log_csv);
    log.open(*options.log_csv, append ? std::ios::app : std::ios::trunc);
    if (!log) throw DataError("cannot open loss log " + options.log_csv->string());
    if (!append) log << "step,total,img_term,feat3_term,feat4_term\n";
    log.precision(9);
  }

  std::vector<LossParts> curve;
  int64_t executed = 0;
  for (int64_t epoch = state.step / per_epoch; epoch < cfg.epochs; ++epoch) {
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), int64_t{0});
    std::mt19937_64 rng(derive_seed({cfg.seed, 0x65706F6368ull, static_cast<uint64_t>(epoch)}));
    std::shuffle(order.begin(), order.end(), rng);

    bool epoch_done = true;
    for (int64_t b = state.step - epoch * per_epoch; b < per_epoch; ++b) {
      if (options.max_steps >= 0 && executed >= options.max_steps) {
        epoch_done = false;
        break;
      }
      const int64_t lo = b * cfg.batch_size, hi = std::min(n, lo + cfg.batch_size);
      std::span<const int64_t> rows(order.data() + lo, static_cast<size_t>(hi - lo));
      const Tensor batch = gather_batch(images, rows);
      const TeacherFeatures tf{gather_batch(all.f3, rows), gather_batch(all.f4, rows)};
      const auto masks = step_masks(cfg, state.step, static_cast<int>(hi - lo), h, w);
      const LossParts parts =
          distill_step(teacher, state.student, state.decoders, batch, masks, state.optimizer, cfg.lr, &tf);
      ++state.step;
      ++executed;
      curve.push_back(parts);
      if (log) log << state.step << ',' << parts.total << ',' << parts.img << ',' << parts.feat3 << ','
                   << parts.feat4 << '\n';
      if (options.on_step) options.on_step(state.step, parts);
    }
    if (!epoch_done) break;
    if (options.checkpoint) save_checkpoint(state, *options.checkpoint);
  }
  return curve;
}

}  // namespace cgaze
