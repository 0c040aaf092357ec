#pragma once

// Flow file codecs and visualization.
//
// `.flo` (Middlebury interchange):
//   bytes 0-3   float 202021.25 little-endian (sanity tag)
//   bytes 4-7   int32 width
//   bytes 8-11  int32 height
//   bytes 12-   row-major interleaved (u, v) float32 pairs
//
// KITTI flow PNG: 16-bit three-channel PNG with
//   u = (ch0 - 2^15) / 64,  v = (ch1 - 2^15) / 64,  ch2 = validity (0/1);
//   invalid pixels are written as all-zero samples.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sciflow/errors.hpp"
#include "sciflow/flow_ops.hpp"
#include "sciflow/raster.hpp"

namespace sciflow {

inline constexpr float kFloMagic = 202021.25f;
inline constexpr int kFlowDimLimit = 99999;

static_assert(std::endian::native == std::endian::little,
              "flow codecs assume a little-endian host");

namespace detail {

struct StdioCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using StdioFile = std::unique_ptr<std::FILE, StdioCloser>;

inline StdioFile open_or_throw(const std::string& path, const char* mode) {
  StdioFile f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open '" + path + "'");
  return f;
}

}  // namespace detail

template <typename T>
FlowField<T> read_flo(const std::string& path) {
  auto f = detail::open_or_throw(path, "rb");
  float tag = 0.0f;
  std::int32_t w = 0, h = 0;
  if (std::fread(&tag, 4, 1, f.get()) != 1 || std::fread(&w, 4, 1, f.get()) != 1 ||
      std::fread(&h, 4, 1, f.get()) != 1) {
    throw LengthError("'" + path + "': truncated .flo header");
  }
  if (tag != kFloMagic) {
    throw FormatError("'" + path + "': bad .flo magic tag");
  }
  if (w < 1 || w > kFlowDimLimit || h < 1 || h > kFlowDimLimit) {
    throw FormatError("'" + path + "': implausible dimensions " +
                      std::to_string(w) + "x" + std::to_string(h));
  }
  const std::size_t n = std::size_t(w) * std::size_t(h);
  std::vector<float> interleaved(n * 2);
  if (std::fread(interleaved.data(), 4, n * 2, f.get()) != n * 2) {
    throw LengthError("'" + path + "': truncated .flo payload");
  }
  if (std::fgetc(f.get()) != EOF) {
    throw LengthError("'" + path + "': trailing bytes after .flo payload");
  }
  std::vector<T> planar(n * 2);
  for (std::size_t i = 0; i < n; ++i) {
    planar[i] = static_cast<T>(interleaved[2 * i]);
    planar[n + i] = static_cast<T>(interleaved[2 * i + 1]);
  }
  return FlowField<T>(Tensor<T>::from_data({1, 2, h, w}, std::move(planar)));
}

template <typename T>
void write_flo(const std::string& path, const FlowField<T>& field) {
  if (field.batch() != 1) {
    throw ArgumentError("write_flo: expected a single-sample field, batch=" +
                        std::to_string(field.batch()));
  }
  const std::int32_t w = field.width(), h = field.height();
  const std::size_t n = std::size_t(w) * std::size_t(h);
  auto f = detail::open_or_throw(path, "wb");
  const float tag = kFloMagic;
  if (std::fwrite(&tag, 4, 1, f.get()) != 1 || std::fwrite(&w, 4, 1, f.get()) != 1 ||
      std::fwrite(&h, 4, 1, f.get()) != 1) {
    throw IoError("'" + path + "': cannot write .flo header");
  }
  const T* u = field.flow.data().data();
  const T* v = u + n;
  std::vector<float> interleaved(n * 2);
  for (std::size_t i = 0; i < n; ++i) {
    interleaved[2 * i] = static_cast<float>(u[i]);
    interleaved[2 * i + 1] = static_cast<float>(v[i]);
  }
  if (std::fwrite(interleaved.data(), 4, n * 2, f.get()) != n * 2) {
    throw IoError("'" + path + "': cannot write .flo payload");
  }
}

template <typename T>
FlowField<T> read_kitti_png(const std::string& path) {
  Raster16 img = read_png16(path);
  if (img.channels != 3) {
    throw FormatError("'" + path + "': KITTI flow needs 3 channels, got " +
                      std::to_string(img.channels));
  }
  const int w = img.width, h = img.height;
  const std::size_t n = std::size_t(w) * h;
  std::vector<T> planar(n * 2);
  std::vector<T> valid(n);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = std::size_t(y) * w + x;
      planar[i] = static_cast<T>((double(img.at(y, x, 0)) - 32768.0) / 64.0);
      planar[n + i] = static_cast<T>((double(img.at(y, x, 1)) - 32768.0) / 64.0);
      valid[i] = img.at(y, x, 2) > 0 ? T(1) : T(0);
    }
  }
  return FlowField<T>(Tensor<T>::from_data({1, 2, h, w}, std::move(planar)),
                      Tensor<T>::from_data({1, 1, h, w}, std::move(valid)));
}

template <typename T>
void write_kitti_png(const std::string& path, const FlowField<T>& field) {
  if (field.batch() != 1) {
    throw ArgumentError("write_kitti_png: expected a single-sample field, batch=" +
                        std::to_string(field.batch()));
  }
  const int w = field.width(), h = field.height();
  const std::size_t n = std::size_t(w) * h;
  const T* u = field.flow.data().data();
  const T* v = u + n;
  Raster16 img;
  img.width = w;
  img.height = h;
  img.channels = 3;
  img.pixels.assign(n * 3, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const bool ok = !field.valid.defined() || field.valid.data()[i] != T(0);
    if (!ok) continue;  // invalid pixels stay all-zero
    auto encode = [](double value) {
      double q = std::lround(value * 64.0 + 32768.0);
      q = q < 0.0 ? 0.0 : (q > 65535.0 ? 65535.0 : q);
      return static_cast<std::uint16_t>(q);
    };
    img.pixels[i * 3] = encode(double(u[i]));
    img.pixels[i * 3 + 1] = encode(double(v[i]));
    img.pixels[i * 3 + 2] = 1;
  }
  write_png16(path, img);
}

namespace detail {

inline void hsv_to_rgb(double h_deg, double s, double v, double rgb[3]) {
  const double h = h_deg / 60.0;
  const int i = static_cast<int>(std::floor(h)) % 6;
  const double f = h - std::floor(h);
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - f * s);
  const double t = v * (1.0 - (1.0 - f) * s);
  switch (i) {
    case 0: rgb[0] = v; rgb[1] = t; rgb[2] = p; break;
    case 1: rgb[0] = q; rgb[1] = v; rgb[2] = p; break;
    case 2: rgb[0] = p; rgb[1] = v; rgb[2] = t; break;
    case 3: rgb[0] = p; rgb[1] = q; rgb[2] = v; break;
    case 4: rgb[0] = t; rgb[1] = p; rgb[2] = v; break;
    default: rgb[0] = v; rgb[1] = p; rgb[2] = q; break;
  }
}

}  // namespace detail

// Color-wheel render: hue encodes direction, saturation encodes magnitude
// normalized by `max_magnitude` (or the per-image valid maximum). Zero flow
// renders white; invalid pixels render black.
template <typename T>
Raster8 flow_to_color(const FlowField<T>& field,
                      std::optional<double> max_magnitude = std::nullopt) {
  const int B = field.batch();
  if (B != 1) {
    throw ArgumentError("flow_to_color: expected a single-sample field, batch=" +
                        std::to_string(B));
  }
  const int w = field.width(), h = field.height();
  const std::size_t n = std::size_t(w) * h;
  const T* u = field.flow.data().data();
  const T* v = u + n;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(double(u[i])) || !std::isfinite(double(v[i]))) {
      throw ValueError("flow_to_color: non-finite flow value at pixel " +
                       std::to_string(i));
    }
  }

  double norm = max_magnitude.value_or(0.0);
  if (!max_magnitude) {
    for (std::size_t i = 0; i < n; ++i) {
      if (field.valid.defined() && field.valid.data()[i] == T(0)) continue;
      norm = std::max(norm, std::hypot(double(u[i]), double(v[i])));
    }
  }
  if (norm <= 0.0) norm = 1.0;  // degenerate all-zero field renders white

  Raster8 img;
  img.width = w;
  img.height = h;
  img.channels = 3;
  img.pixels.resize(n * 3);
  for (std::size_t i = 0; i < n; ++i) {
    if (field.valid.defined() && field.valid.data()[i] == T(0)) {
      img.pixels[i * 3] = img.pixels[i * 3 + 1] = img.pixels[i * 3 + 2] = 0;
      continue;
    }
    const double mag = std::hypot(double(u[i]), double(v[i]));
    const double ang = std::atan2(double(v[i]), double(u[i]));  // (-pi, pi]
    double hue = ang * (180.0 / 3.14159265358979323846) + 180.0;
    if (hue >= 360.0) hue -= 360.0;
    const double sat = std::min(mag / norm, 1.0);
    double rgb[3];
    detail::hsv_to_rgb(hue, sat, 1.0, rgb);
    for (int c = 0; c < 3; ++c) {
      img.pixels[i * 3 + c] =
          static_cast<std::uint8_t>(std::lround(255.0 * rgb[c]));
    }
  }
  return img;
}

}  // namespace sciflow
