// Copyright (C) 2026 The cgaze Authors
// SPDX-License-Identifier: Apache-2.0

#include "cgaze/weights.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

namespace cgaze {

static_assert(std::endian::native == std::endian::little, "DFTW I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'D', 'F', 'T', 'W'};
constexpr uint8_t kDtypeF32 = 0;

class Writer {
 public:
  void bytes(const void* p, size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  template <typename T>
  void put(T v) {
    bytes(&v, sizeof v);
  }
  std::vector<uint8_t>& buffer() { return buf_; }

 private:
  std::vector<uint8_t> buf_;
};

class Reader {
 public:
  Reader(const uint8_t* p, size_t n) : p_(p), n_(n) {}
  void bytes(void* dst, size_t n) {
    if (n > n_ - pos_) throw CorruptionError("weight file truncated at byte " + std::to_string(pos_));
    std::memcpy(dst, p_ + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T get() {
    T v;
    bytes(&v, sizeof v);
    return v;
  }
  bool done() const { return pos_ == n_; }

 private:
  const uint8_t* p_;
  size_t n_;
  size_t pos_ = 0;
};

uint32_t crc32_of(const uint8_t* p, size_t n) {
  uLong c = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<size_t>(n, 1u << 30));
    c = crc32(c, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<uint32_t>(c);
}

}  // namespace

std::vector<uint8_t> encode_tensors(const NamedTensors& tensors) {
  Writer w;
  std::set<std::string> seen;
  w.bytes(kMagic, 4);
  w.put<uint32_t>(kWeightFileVersion);
  w.put<uint32_t>(static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (!seen.insert(name).second) throw ConfigError("duplicate tensor name '" + name + "'");
    if (name.size() > 0xFFFF) throw ConfigError("tensor name too long");
    w.put<uint16_t>(static_cast<uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.put<uint8_t>(kDtypeF32);
    w.put<uint8_t>(static_cast<uint8_t>(t.ndim()));
    for (int i = 0; i < t.ndim(); ++i) w.put<uint32_t>(static_cast<uint32_t>(t.dim(i)));
    w.bytes(t.data(), t.size() * sizeof(float));
  }
  auto& buf = w.buffer();
  const uint32_t crc = crc32_of(buf.data(), buf.size());
  w.put<uint32_t>(crc);
  return std::move(buf);
}

NamedTensors decode_tensors(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw CorruptionError("not a DFTW weight file");
  const size_t body = bytes.size() - 4;
  uint32_t stored;
  std::memcpy(&stored, bytes.data() + body, 4);
  if (crc32_of(bytes.data(), body) != stored) throw CorruptionError("weight file CRC mismatch");

  Reader r(bytes.data(), body);
  char magic[4];
  r.bytes(magic, 4);
  const auto version = r.get<uint32_t>();
  if (version != kWeightFileVersion)
    throw VersionError("unsupported weight file version " + std::to_string(version));
  const auto count = r.get<uint32_t>();
  NamedTensors out;
  std::set<std::string> seen;
  for (uint32_t e = 0; e < count; ++e) {
    std::string name(r.get<uint16_t>(), '\0');
    r.bytes(name.data(), name.size());
    const auto dtype = r.get<uint8_t>();
    if (dtype != kDtypeF32)
      throw VersionError("tensor '" + name + "' has unknown dtype code " + std::to_string(dtype));
    const auto ndim = r.get<uint8_t>();
    if (ndim < 1 || ndim > 4) throw CorruptionError("tensor '" + name + "' has rank " + std::to_string(ndim));
    Shape shape(ndim);
    for (auto& d : shape) {
      d = r.get<uint32_t>();
      if (d == 0) throw CorruptionError("tensor '" + name + "' has a zero dimension");
    }
    Tensor t(shape);
    r.bytes(t.data(), t.size() * sizeof(float));
    if (!seen.insert(name).second) throw CorruptionError("duplicate tensor name '" + name + "'");
    out.emplace_back(std::move(name), std::move(t));
  }
  if (!r.done()) throw CorruptionError("trailing bytes after the last tensor");
  return out;
}

void write_tensors(const std::filesystem::path& path, const NamedTensors& tensors) {
  const auto bytes = encode_tensors(tensors);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("short write to " + path.string());
}

NamedTensors read_tensors(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open weight file " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_tensors(bytes);
}

void save_weights(const ConstParamRefs& params, const std::filesystem::path& path) {
  NamedTensors t;
  t.reserve(params.size());
  for (const auto* p : params) t.emplace_back(p->name, p->value);
  write_tensors(path, t);
}

void load_weights(const ParamRefs& params, const NamedTensors& tensors, LoadMode mode) {
  std::map<std::string, Parameter*> by_name;
  for (auto* p : params) by_name.emplace(p->name, p);
  std::set<std::string> loaded;
  for (const auto& [name, t] : tensors) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ConfigError("weight '" + name + "' does not exist in the model");
    if (t.shape() != it->second->value.shape())
      throw ConfigError("weight '" + name + "' has shape " + to_string(t.shape()) + ", model expects " +
                        to_string(it->second->value.shape()));
    loaded.insert(name);
  }
  if (mode == LoadMode::Strict && loaded.size() != by_name.size()) {
    for (const auto& [name, p] : by_name)
      if (!loaded.count(name)) throw ConfigError("weight file is missing '" + name + "'");
  }
  for (const auto& [name, t] : tensors) by_name.at(name)->value = t;
}

void load_weights(const ParamRefs& params, const std::filesystem::path& path, LoadMode mode) {
  load_weights(params, read_tensors(path), mode);
}

NamedTensors model_entries(const NamedTensors& tensors) {
  NamedTensors out;
  for (const auto& e : tensors)
    if (e.first.rfind("decoder.", 0) != 0 && e.first.rfind("optim.", 0) != 0) out.push_back(e);
  return out;
}

GazeModel model_from_tensors(const NamedTensors& tensors) {
  const NamedTensors entries = model_entries(tensors);
  std::vector<std::pair<std::string, Shape>> shapes;
  for (const auto& [name, t] : entries) shapes.emplace_back(name, t.shape());
  const ModelConfig cfg = infer_config(shapes);
  GazeModel m = build_model(cfg, 0);
  load_weights(m.params(), entries, LoadMode::Strict);
  if (m.has_adapters()) set_trainable(m.params(), is_adapter_param);
  return m;
}

GazeModel load_model(const std::filesystem::path& path) { return model_from_tensors(read_tensors(path)); }

void save_model(const GazeModel& model, const std::filesystem::path& path) {
  save_weights(model.params(), path);
}

}  // namespace cgaze
