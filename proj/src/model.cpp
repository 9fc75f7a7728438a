// Copyright (C) 2026 The cgaze Authors
// SPDX-License-Identifier: Apache-2.0

#include "cgaze/model.hpp"

#include <algorithm>
#include <map>
#include <random>
#include <unordered_map>

namespace cgaze {

namespace k = kernels;

ModelConfig ModelConfig::teacher() { return ModelConfig{}; }

ModelConfig ModelConfig::student() {
  ModelConfig c;
  c.stage_dims = {40, 20, 40, 80};
  return c;
}

void ModelConfig::validate() const {
  if (in_channels < 1) throw ConfigError("in_channels must be positive");
  for (int s = 0; s < 4; ++s) {
    if (stage_dims[s] < 1 || stage_depths[s] < 0)
      throw ConfigError("stage dims must be positive and depths non-negative");
    if (adapters_enabled && stage_dims[s] % adapter_ratio != 0)
      throw ConfigError("stage dim " + std::to_string(stage_dims[s]) +
                        " not divisible by adapter ratio " + std::to_string(adapter_ratio));
  }
  if (patch_stride < 1) throw ConfigError("patch_stride must be positive");
  if (head_outputs < 1) throw ConfigError("head_outputs must be positive");
}

namespace {

class Init {
 public:
  explicit Init(uint64_t seed) : rng_(seed) {}

  // Normal(0, std) resampled outside +-2 std.
  Tensor trunc_normal(Shape shape, float std = 0.02f) {
    Tensor t(std::move(shape));
    std::normal_distribution<float> dist(0.0f, 1.0f);
    for (float& v : t.values()) {
      float z;
      do {
        z = dist(rng_);
      } while (z < -2.0f || z > 2.0f);
      v = z * std;
    }
    return t;
  }

 private:
  std::mt19937_64 rng_;
};

Conv make_conv(const std::string& prefix, int in, int out, int kernel, int stride, int groups,
               Init& init, bool zero_init = false) {
  Conv c;
  Shape ws{out, in / groups, kernel, kernel};
  c.weight = Parameter(prefix + ".weight", zero_init ? Tensor(ws) : init.trunc_normal(ws));
  c.bias = Parameter(prefix + ".bias", Tensor({out}));
  c.params = k::conv_params_for(kernel, stride, groups);
  return c;
}

Norm make_norm(const std::string& prefix, int dim) {
  return Norm{Parameter(prefix + ".weight", Tensor({dim}, 1.0f)),
              Parameter(prefix + ".bias", Tensor({dim}))};
}

ConvNeXtBlock make_block(const std::string& prefix, int dim, Init& init) {
  ConvNeXtBlock b;
  b.dim = dim;
  b.dwconv = make_conv(prefix + ".dwconv", dim, dim, 7, 1, dim, init);
  b.norm = make_norm(prefix + ".norm", dim);
  b.pw_expand = make_conv(prefix + ".pwconv1", dim, 4 * dim, 1, 1, 1, init);
  b.grn_gamma = Parameter(prefix + ".grn.gamma", Tensor({4 * dim}));
  b.grn_beta = Parameter(prefix + ".grn.beta", Tensor({4 * dim}));
  b.pw_project = make_conv(prefix + ".pwconv2", 4 * dim, dim, 1, 1, 1, init);
  return b;
}

AdapterModule make_adapter(const std::string& prefix, int dim, int ratio, Init& init) {
  const int hidden = dim / ratio;
  AdapterModule a;
  a.fc_down = make_conv(prefix + ".fc_down", dim, hidden, 1, 1, 1, init);
  a.bn_weight = Parameter(prefix + ".bn.weight", Tensor({hidden}, 1.0f));
  a.bn_bias = Parameter(prefix + ".bn.bias", Tensor({hidden}));
  a.bn_mean = Parameter(prefix + ".bn.running_mean", Tensor({hidden}), true);
  a.bn_var = Parameter(prefix + ".bn.running_var", Tensor({hidden}, 1.0f), true);
  // Zero-initialized up projection: the adapter starts as an exact no-op.
  a.fc_up = make_conv(prefix + ".fc_up", hidden, dim, 1, 1, 1, init, true);
  return a;
}

DecoderPsi make_psi(const std::string& prefix, int in_dim, int out_dim, Init& init) {
  DecoderPsi d;
  d.in_dim = in_dim;
  d.out_dim = out_dim;
  d.dwconv = make_conv(prefix + ".dwconv", in_dim, in_dim, 7, 1, in_dim, init);
  d.norm = make_norm(prefix + ".norm", in_dim);
  d.pw_expand = make_conv(prefix + ".pwconv1", in_dim, 4 * in_dim, 1, 1, 1, init);
  d.grn_gamma = Parameter(prefix + ".grn.gamma", Tensor({4 * in_dim}));
  d.grn_beta = Parameter(prefix + ".grn.beta", Tensor({4 * in_dim}));
  d.pw_project = make_conv(prefix + ".pwconv2", 4 * in_dim, in_dim, 1, 1, 1, init);
  d.fc = make_conv(prefix + ".fc", in_dim, out_dim, 1, 1, 1, init);
  return d;
}

std::string block_prefix(int s, size_t b) {
  return "stages." + std::to_string(s) + "." + std::to_string(b);
}

template <class Ref, class C>
void push_conv(std::vector<Ref>& out, C& c) {
  out.push_back(&c.weight);
  out.push_back(&c.bias);
}

template <class Ref, class N>
void push_norm(std::vector<Ref>& out, N& n) {
  out.push_back(&n.weight);
  out.push_back(&n.bias);
}

template <class Ref, class B>
void push_block(std::vector<Ref>& out, B& b) {
  push_conv(out, b.dwconv);
  push_norm(out, b.norm);
  push_conv(out, b.pw_expand);
  out.push_back(&b.grn_gamma);
  out.push_back(&b.grn_beta);
  push_conv(out, b.pw_project);
  if (b.adapter) {
    auto& a = *b.adapter;
    push_conv(out, a.fc_down);
    out.push_back(&a.bn_weight);
    out.push_back(&a.bn_bias);
    out.push_back(&a.bn_mean);
    out.push_back(&a.bn_var);
    push_conv(out, a.fc_up);
  }
}

template <class Ref, class M>
std::vector<Ref> model_params(M& m) {
  std::vector<Ref> out;
  push_conv(out, m.stem);
  push_norm(out, m.stem_norm);
  for (int s = 0; s < 4; ++s) {
    if (m.downsample[s]) {
      push_norm(out, m.downsample[s]->norm);
      push_conv(out, m.downsample[s]->conv);
    }
    for (auto& b : m.stages[s]) push_block(out, b);
  }
  push_norm(out, m.head.norm);
  out.push_back(&m.head.fc_weight);
  out.push_back(&m.head.fc_bias);
  return out;
}

template <class Ref, class P>
void push_psi(std::vector<Ref>& out, P& d) {
  push_conv(out, d.dwconv);
  push_norm(out, d.norm);
  push_conv(out, d.pw_expand);
  out.push_back(&d.grn_gamma);
  out.push_back(&d.grn_beta);
  push_conv(out, d.pw_project);
  push_conv(out, d.fc);
}

template <class Ref, class D>
std::vector<Ref> decoder_params(D& d) {
  std::vector<Ref> out;
  push_block(out, d.image.block);
  push_conv(out, d.image.proj);
  push_psi(out, d.psi3);
  push_psi(out, d.psi4);
  return out;
}

ag::Var conv(const Conv& c, const ag::Var& x, ForwardCtx& ctx) {
  return ag::conv2d(x, ctx.tape.param(c.weight), ctx.tape.param(c.bias), c.params);
}

ag::Var norm(const Norm& n, const ag::Var& x, k::NormAxis axis, ForwardCtx& ctx) {
  return ag::layer_norm(x, ctx.tape.param(n.weight), ctx.tape.param(n.bias), axis);
}

ag::Var adapter_forward(const AdapterModule& a, const ag::Var& x, ForwardCtx& ctx) {
  ag::Var h = conv(a.fc_down, x, ctx);
  // Batch statistics only for trainable adapters.
  const bool bn_train = ctx.training && !ctx.freeze_bn_stats && a.bn_weight.trainable;
  k::BatchStats stats;
  h = ag::batch_norm(h, ctx.tape.param(a.bn_weight), ctx.tape.param(a.bn_bias), a.bn_mean.value,
                     a.bn_var.value, bn_train, bn_train ? &stats : nullptr);
  if (bn_train && ctx.bn_updates) ctx.bn_updates->push_back({&a.bn_mean, &a.bn_var, std::move(stats)});
  h = ag::leaky_relu(h);
  return conv(a.fc_up, h, ctx);
}

}  // namespace

ParamRefs GazeModel::params() { return model_params<Parameter*>(*this); }
ConstParamRefs GazeModel::params() const { return model_params<const Parameter*>(*this); }

bool GazeModel::has_adapters() const {
  for (const auto& stage : stages)
    for (const auto& b : stage)
      if (b.adapter) return true;
  return false;
}

ParamRefs DistillDecoders::params() { return decoder_params<Parameter*>(*this); }
ConstParamRefs DistillDecoders::params() const { return decoder_params<const Parameter*>(*this); }

GazeModel build_model(const ModelConfig& config, uint64_t seed) {
  config.validate();
  Init init(seed);
  GazeModel m;
  m.config = config;
  m.config.adapters_enabled = false;
  m.stem = make_conv("stem.conv", config.in_channels, config.stage_dims[0], config.patch_stride,
                     config.patch_stride, 1, init);
  m.stem_norm = make_norm("stem.norm", config.stage_dims[0]);
  for (int s = 0; s < 4; ++s) {
    if (s > 0) {
      const std::string p = "downsample." + std::to_string(s);
      m.downsample[s] = Downsample{make_norm(p + ".norm", config.stage_dims[s - 1]),
                                   make_conv(p + ".conv", config.stage_dims[s - 1],
                                             config.stage_dims[s], 2, 2, 1, init)};
    }
    for (int b = 0; b < config.stage_depths[s]; ++b)
      m.stages[s].push_back(make_block(block_prefix(s, static_cast<size_t>(b)), config.stage_dims[s], init));
  }
  m.head.norm = make_norm("head.norm", config.stage_dims[3]);
  m.head.fc_weight = Parameter("head.fc.weight", init.trunc_normal({config.head_outputs, config.stage_dims[3]}));
  m.head.fc_bias = Parameter("head.fc.bias", Tensor({config.head_outputs}));
  if (config.adapters_enabled) attach_adapters(m, seed ^ 0x5bd1e995ull);
  return m;
}

GazeModel build_teacher(uint64_t seed) { return build_model(ModelConfig::teacher(), seed); }

GazeModel build_student_from_teacher(const GazeModel& teacher, uint64_t seed) {
  if (teacher.has_adapters()) throw ConfigError("teacher must not carry adapters");
  ModelConfig sc = teacher.config;
  for (int s = 1; s < 4; ++s) {
    if (sc.stage_dims[s] % 4 != 0)
      throw ConfigError("teacher stage dim " + std::to_string(sc.stage_dims[s]) +
                        " is not divisible by 4");
    sc.stage_dims[s] /= 4;
  }
  GazeModel student = build_model(sc, seed);
  if (student.stem.weight.value.shape() != teacher.stem.weight.value.shape() ||
      student.stages[0].size() != teacher.stages[0].size())
    throw ConfigError("student stage 1 " + to_string(student.stem.weight.value.shape()) +
                      " does not match teacher stage 1 " + to_string(teacher.stem.weight.value.shape()));
  student.stem = teacher.stem;
  student.stem_norm = teacher.stem_norm;
  student.stages[0] = teacher.stages[0];
  return student;
}

void attach_adapters(GazeModel& model, uint64_t seed) {
  if (model.has_adapters()) throw ConfigError("adapters already attached");
  ModelConfig cfg = model.config;
  cfg.adapters_enabled = true;
  cfg.validate();
  Init init(seed);
  for (int s = 0; s < 4; ++s)
    for (size_t b = 0; b < model.stages[s].size(); ++b) {
      auto& block = model.stages[s][b];
      block.adapter = make_adapter(block_prefix(s, b) + ".adapter", block.dim, cfg.adapter_ratio, init);
    }
  model.config = cfg;
  set_trainable(model.params(), is_adapter_param);
}

DistillDecoders build_decoders(const ModelConfig& student, const ModelConfig& teacher,
                               uint64_t seed) {
  Init init(seed);
  DistillDecoders d;
  const int patch = student.total_stride();
  d.image.patch = patch;
  d.image.channels = student.in_channels;
  d.image.block = make_block("decoder.image.block", student.stage_dims[3], init);
  d.image.proj = make_conv("decoder.image.proj", student.stage_dims[3],
                           patch * patch * student.in_channels, 1, 1, 1, init);
  d.psi3 = make_psi("decoder.psi3", student.stage_dims[2], teacher.stage_dims[2], init);
  d.psi4 = make_psi("decoder.psi4", student.stage_dims[3], teacher.stage_dims[3], init);
  return d;
}

ag::Var block_forward(const ConvNeXtBlock& b, const ag::Var& x, ForwardCtx& ctx) {
  ag::Var h = conv(b.dwconv, x, ctx);
  h = norm(b.norm, h, k::NormAxis::Channel, ctx);
  h = conv(b.pw_expand, h, ctx);
  h = ag::gelu(h);
  h = ag::grn(h, ctx.tape.param(b.grn_gamma), ctx.tape.param(b.grn_beta));
  h = conv(b.pw_project, h, ctx);
  if (b.adapter) h = ag::add(h, adapter_forward(*b.adapter, h, ctx));
  return ag::add(x, h);
}

StageFeatures forward_features(const GazeModel& model, const ag::Var& images,
                               std::span<const MaskSpec> masks, ForwardCtx& ctx) {
  const Tensor& img = images->val();
  const ModelConfig& cfg = model.config;
  if (img.ndim() != 4 || img.dim(1) != cfg.in_channels)
    throw ConfigError("forward_features expects (N," + std::to_string(cfg.in_channels) +
                      ",H,W) images, got " + to_string(img.shape()));
  const int64_t h = img.dim(2), w = img.dim(3);
  if (h % cfg.total_stride() != 0 || w % cfg.total_stride() != 0)
    throw ConfigError("image size " + to_string(img.shape()) + " not divisible by " +
                      std::to_string(cfg.total_stride()));

  StageFeatures out;
  ag::Var x = images;
  if (!masks.empty()) {
    if (static_cast<int64_t>(masks.size()) != img.dim(0))
      throw ConfigError("need one mask per image");
    const Tensor pix = batch_stage_mask(masks, 1, static_cast<int>(h), static_cast<int>(w));
    Tensor keep(img.shape());
    const int64_t plane = h * w;
    for (int64_t n = 0; n < img.dim(0); ++n)
      for (int64_t c = 0; c < img.dim(1); ++c)
        for (int64_t i = 0; i < plane; ++i)
          keep[static_cast<size_t>((n * img.dim(1) + c) * plane + i)] =
              1.0f - pix[static_cast<size_t>(n * plane + i)];
    x = ag::mul_const(x, keep);
    std::array<Tensor, 4> sm;
    for (int s = 0; s < 4; ++s)
      sm[s] = batch_stage_mask(masks, cfg.stage_stride(s), static_cast<int>(h), static_cast<int>(w));
    out.masks = std::move(sm);
  }

  x = conv(model.stem, x, ctx);
  x = norm(model.stem_norm, x, k::NormAxis::Channel, ctx);
  for (int s = 0; s < 4; ++s) {
    if (model.downsample[s]) {
      x = norm(model.downsample[s]->norm, x, k::NormAxis::Channel, ctx);
      x = conv(model.downsample[s]->conv, x, ctx);
    }
    for (const auto& b : model.stages[s]) x = block_forward(b, x, ctx);
    out.f[s] = x;
  }
  return out;
}

ag::Var forward_gaze(const GazeModel& model, const ag::Var& images, ForwardCtx& ctx) {
  StageFeatures f = forward_features(model, images, {}, ctx);
  ag::Var x = ag::global_avg_pool(f.f[3]);
  x = norm(model.head.norm, x, k::NormAxis::Last, ctx);
  return ag::linear(x, ctx.tape.param(model.head.fc_weight), ctx.tape.param(model.head.fc_bias));
}

Tensor predict_gaze(const GazeModel& model, const Tensor& images) {
  ag::Tape tape(false);
  ForwardCtx ctx{tape};
  return forward_gaze(model, ag::constant(images), ctx)->value;
}

ag::Var decode_psi(const DecoderPsi& d, const ag::Var& z, ForwardCtx& ctx) {
  if (z->val().ndim() != 4 || z->val().dim(1) != d.in_dim)
    throw ConfigError("decode_psi expects " + std::to_string(d.in_dim) + " channels, got " +
                      to_string(z->shape()));
  ag::Var h = conv(d.dwconv, z, ctx);
  h = norm(d.norm, h, k::NormAxis::Channel, ctx);
  h = conv(d.pw_expand, h, ctx);
  h = ag::gelu(h);
  h = ag::grn(h, ctx.tape.param(d.grn_gamma), ctx.tape.param(d.grn_beta));
  h = conv(d.pw_project, h, ctx);
  return conv(d.fc, ag::add(z, h), ctx);
}

ag::Var decode_image(const ImageDecoder& d, const ag::Var& f4, ForwardCtx& ctx) {
  ag::Var h = block_forward(d.block, f4, ctx);
  h = conv(d.proj, h, ctx);
  return ag::patches_to_image(h, d.patch, d.channels);
}

void apply_bn_updates(const ParamRefs& params, const std::vector<BnUpdate>& updates) {
  std::unordered_map<const Parameter*, Parameter*> lookup;
  for (Parameter* p : params) lookup.emplace(p, p);
  for (const auto& u : updates) {
    auto m = lookup.find(u.mean);
    auto v = lookup.find(u.var);
    if (m == lookup.end() || v == lookup.end())
      throw InternalError("batch-norm update for a parameter outside the model");
    k::update_running_stats(m->second->value, v->second->value, u.stats);
  }
}

int64_t count_params(const ConstParamRefs& params, bool trainable_only) {
  int64_t n = 0;
  for (const Parameter* p : params)
    if (!trainable_only || p->trainable) n += p->count();
  return n;
}

int64_t count_params(const GazeModel& model, bool trainable_only) {
  return count_params(model.params(), trainable_only);
}

void set_trainable(const ParamRefs& params, const std::function<bool(const std::string&)>& pred) {
  for (Parameter* p : params) p->trainable = pred(p->name);
}

bool is_adapter_param(const std::string& name) {
  return name.find(".adapter.") != std::string::npos;
}

bool is_stage1_param(const std::string& name) {
  return name.rfind("stem.", 0) == 0 || name.rfind("stages.0.", 0) == 0;
}

bool is_head_param(const std::string& name) { return name.rfind("head.", 0) == 0; }

int stage_of(const std::string& name) {
  if (name.rfind("stages.", 0) != 0 || name.size() < 8) return -1;
  const char c = name[7];
  return (c >= '0' && c <= '3') ? c - '0' : -1;
}

ModelConfig infer_config(std::span<const std::pair<std::string, Shape>> entries) {
  std::map<std::string, Shape> by_name(entries.begin(), entries.end());
  auto need = [&](const std::string& n) -> const Shape& {
    auto it = by_name.find(n);
    if (it == by_name.end()) throw ConfigError("weights lack '" + n + "'");
    return it->second;
  };
  ModelConfig c;
  const Shape& stem = need("stem.conv.weight");
  c.in_channels = static_cast<int>(stem[1]);
  c.patch_stride = static_cast<int>(stem[2]);
  c.adapters_enabled = false;
  for (int s = 0; s < 4; ++s) {
    int depth = 0;
    while (by_name.count(block_prefix(s, static_cast<size_t>(depth)) + ".dwconv.weight")) ++depth;
    c.stage_depths[s] = depth;
    c.stage_dims[s] = depth > 0 ? static_cast<int>(need(block_prefix(s, 0) + ".dwconv.weight")[0])
                                : static_cast<int>(s == 0 ? stem[0]
                                                          : need("downsample." + std::to_string(s) + ".conv.weight")[0]);
    if (depth > 0 && by_name.count(block_prefix(s, 0) + ".adapter.fc_down.weight")) {
      c.adapters_enabled = true;
      c.adapter_ratio = c.stage_dims[s] /
                        static_cast<int>(need(block_prefix(s, 0) + ".adapter.fc_down.weight")[0]);
    }
  }
  c.head_outputs = static_cast<int>(need("head.fc.weight")[0]);
  c.validate();
  return c;
}

}  // namespace cgaze
