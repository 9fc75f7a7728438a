// Copyright (C) 2026 The cgaze Authors
// SPDX-License-Identifier: Apache-2.0

#include "cgaze/dataset.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numbers>
#include <sstream>

#include "json.hpp"

namespace cgaze {

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    case Split::Personal: return "personal";
  }
  return "train";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  if (s == "personal") return Split::Personal;
  throw DataError("unknown split '" + s + "'");
}

Split split_for(const std::string& subject, int64_t index) {
  uint64_t h = 0xcbf29ce484222325ull;
  const std::string key = subject + ":" + std::to_string(index);
  for (unsigned char c : key) h = (h ^ c) * 0x100000001b3ull;
  h ^= h >> 29;
  switch (h % 10) {
    case 8: return Split::Val;
    case 9: return Split::Test;
    default: return Split::Train;
  }
}

Tensor stack_images(const GazeDataset& data, std::span<const int64_t> rows) {
  if (rows.empty()) throw DataError("empty dataset");
  const Shape s = data.at(static_cast<size_t>(rows[0])).image.shape();
  Tensor out({static_cast<int64_t>(rows.size()), s[0], s[1], s[2]});
  const size_t plane = static_cast<size_t>(numel(s));
  for (size_t i = 0; i < rows.size(); ++i) {
    const Tensor& img = data.at(static_cast<size_t>(rows[i])).image;
    if (img.shape() != s) throw DataError("images of different sizes in one batch");
    std::copy_n(img.data(), plane, out.data() + i * plane);
  }
  return out;
}

Tensor stack_labels(const GazeDataset& data, std::span<const int64_t> rows) {
  if (rows.empty()) throw DataError("empty dataset");
  Tensor out({static_cast<int64_t>(rows.size()), 2});
  for (size_t i = 0; i < rows.size(); ++i) {
    const auto& s = data.at(static_cast<size_t>(rows[i]));
    out[2 * i] = s.pitch;
    out[2 * i + 1] = s.yaw;
  }
  return out;
}

std::vector<int64_t> all_rows(const GazeDataset& data) {
  std::vector<int64_t> r(data.size());
  for (size_t i = 0; i < r.size(); ++i) r[i] = static_cast<int64_t>(i);
  return r;
}

GazeDataset filter_split(const GazeDataset& data, Split split) {
  GazeDataset out;
  for (const auto& s : data)
    if (s.split == split) out.push_back(s);
  return out;
}

GazeDataset filter_subject(const GazeDataset& data, const std::string& subject) {
  GazeDataset out;
  for (const auto& s : data)
    if (s.subject == subject) out.push_back(s);
  return out;
}

uint8_t quantize_u8(float v) {
  return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

namespace {

std::vector<uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open image " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

Tensor read_pgm(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t += static_cast<char>(bytes[pos++]);
    return t;
  };
  if (token() != "P5") throw DataError(path.string() + ": not a binary PGM (P5)");
  long w = 0, h = 0, maxval = 0;
  try {
    w = std::stol(token());
    h = std::stol(token());
    maxval = std::stol(token());
  } catch (const std::exception&) {
    throw DataError(path.string() + ": malformed PGM header");
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) throw DataError(path.string() + ": bad PGM header");
  ++pos;  // single whitespace after maxval
  const size_t bpp = maxval > 255 ? 2 : 1;
  if (bytes.size() < pos + static_cast<size_t>(w * h) * bpp) throw DataError(path.string() + ": truncated PGM");
  Tensor img({1, h, w});
  for (size_t i = 0; i < img.size(); ++i) {
    const size_t o = pos + i * bpp;
    const unsigned v = bpp == 1 ? bytes[o] : (static_cast<unsigned>(bytes[o]) << 8) | bytes[o + 1];
    img[i] = static_cast<float>(v) / static_cast<float>(maxval);
  }
  return img;
}

Tensor read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str()))
    throw DataError(path.string() + ": " + image.message);
  image.format = PNG_FORMAT_GRAY;
  std::vector<uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    throw DataError(path.string() + ": " + image.message);
  }
  Tensor img({1, static_cast<int64_t>(image.height), static_cast<int64_t>(image.width)});
  for (size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(buf[i]) / 255.0f;
  return img;
}

std::string lower_ext(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e;
}

void require_gray(const Tensor& image) {
  if (image.ndim() != 3 || image.dim(0) != 1)
    throw ConfigError("expected a (1,H,W) grayscale image, got " + to_string(image.shape()));
}

}  // namespace

Tensor read_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("missing image file " + path.string());
  return lower_ext(path) == ".png" ? read_png(path) : read_pgm(path);
}

void write_pgm(const std::filesystem::path& path, const Tensor& image) {
  require_gray(image);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  f << "P5\n" << image.dim(2) << ' ' << image.dim(1) << "\n255\n";
  std::vector<uint8_t> px(image.size());
  for (size_t i = 0; i < px.size(); ++i) px[i] = quantize_u8(image[i]);
  f.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
}

void write_png(const std::filesystem::path& path, const Tensor& image) {
  require_gray(image);
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.dim(2));
  img.height = static_cast<png_uint_32>(image.dim(1));
  img.format = PNG_FORMAT_GRAY;
  std::vector<uint8_t> px(image.size());
  for (size_t i = 0; i < px.size(); ++i) px[i] = quantize_u8(image[i]);
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, px.data(), 0, nullptr))
    throw DataError("cannot write " + path.string() + ": " + img.message);
}

Tensor resize_bilinear(const Tensor& image, int out_h, int out_w) {
  require_gray(image);
  if (out_h < 1 || out_w < 1) throw ConfigError("resize target must be positive");
  const int64_t h = image.dim(1), w = image.dim(2);
  if (h == out_h && w == out_w) return image;
  Tensor out({1, out_h, out_w});
  const float sy = static_cast<float>(h) / out_h, sx = static_cast<float>(w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const float fy = std::clamp((y + 0.5f) * sy - 0.5f, 0.0f, static_cast<float>(h - 1));
    const int64_t y0 = static_cast<int64_t>(fy), y1 = std::min(y0 + 1, h - 1);
    const float ty = fy - static_cast<float>(y0);
    for (int x = 0; x < out_w; ++x) {
      const float fx = std::clamp((x + 0.5f) * sx - 0.5f, 0.0f, static_cast<float>(w - 1));
      const int64_t x0 = static_cast<int64_t>(fx), x1 = std::min(x0 + 1, w - 1);
      const float tx = fx - static_cast<float>(x0);
      const float top = image[y0 * w + x0] * (1 - tx) + image[y0 * w + x1] * tx;
      const float bot = image[y1 * w + x0] * (1 - tx) + image[y1 * w + x1] * tx;
      out[static_cast<size_t>(y * out_w + x)] = top * (1 - ty) + bot * ty;
    }
  }
  return out;
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& manifest) {
  std::ifstream f(manifest);
  if (!f) throw DataError("cannot open manifest " + manifest.string());
  std::vector<ManifestRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = manifest.string() + ":" + std::to_string(lineno);
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestRecord r;
      r.image = j.at("image").get<std::string>();
      r.pitch = j.at("pitch").get<float>();
      r.yaw = j.at("yaw").get<float>();
      r.subject = j.at("subject").get<std::string>();
      r.split = parse_split(j.value("split", std::string("train")));
      if (!std::isfinite(r.pitch) || !std::isfinite(r.yaw) || std::fabs(r.pitch) > std::numbers::pi_v<float> / 2 ||
          std::fabs(r.yaw) > std::numbers::pi_v<float> / 2)
        throw DataError("gaze angle outside [-pi/2, pi/2]");
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("malformed manifest record at line " + std::to_string(lineno) + " (" + where + "): " + e.what());
    } catch (const DataError& e) {
      throw DataError("malformed manifest record at line " + std::to_string(lineno) + " (" + where + "): " + e.what());
    }
  }
  return out;
}

void write_manifest(const std::filesystem::path& manifest, const std::vector<ManifestRecord>& records) {
  std::ofstream f(manifest, std::ios::trunc);
  if (!f) throw DataError("cannot write manifest " + manifest.string());
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["image"] = r.image;
    j["pitch"] = r.pitch;
    j["yaw"] = r.yaw;
    j["subject"] = r.subject;
    j["split"] = to_string(r.split);
    f << j.dump() << '\n';
  }
}

GazeDataset load_dataset(const std::filesystem::path& manifest, const LoadOptions& options) {
  const auto records = read_manifest(manifest);
  const auto base = manifest.parent_path();
  GazeDataset out;
  for (const auto& r : records) {
    if (options.split && r.split != *options.split) continue;
    if (options.subject && r.subject != *options.subject) continue;
    GazeSample s;
    s.image = read_image(base / r.image);
    if (options.resolution > 0) s.image = resize_bilinear(s.image, options.resolution, options.resolution);
    s.pitch = r.pitch;
    s.yaw = r.yaw;
    s.subject = r.subject;
    s.split = r.split;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace cgaze
