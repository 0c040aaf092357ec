#pragma once

// Synthetic training pairs with exact analytic ground-truth flow, and
// ingestion of on-disk datasets (Sintel-like, KITTI-like, flo pairs).

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sciflow/errors.hpp"
#include "sciflow/flow_ops.hpp"
#include "sciflow/raster.hpp"
#include "sciflow/tensor.hpp"

namespace sciflow {

enum class TextureKind { smooth_noise, checker };
enum class TransformFamily { translation, affine };
enum class DatasetLayout { sintel_like, kitti_like, flo_pairs };

TextureKind parse_texture_kind(const std::string& s);
TransformFamily parse_transform_family(const std::string& s);
DatasetLayout parse_dataset_layout(const std::string& s);
std::string to_string(TextureKind);
std::string to_string(TransformFamily);
std::string to_string(DatasetLayout);

struct SynthConfig {
  int width = 32;
  int height = 32;
  double max_displacement = 4.0;  // must stay below min(width,height)/2
  TextureKind texture = TextureKind::smooth_noise;
  TransformFamily transforms = TransformFamily::translation;
  std::uint64_t seed = 0;
  int count = 100;
};

// Plain planar flow arrays, the pre-tensor sample carrier.
struct FlowData {
  int width = 0, height = 0;
  std::vector<float> u, v;
  std::vector<std::uint8_t> valid;  // empty means all pixels valid
};

struct FlowSample {
  Raster8 image1, image2;
  std::optional<FlowData> flow_gt;
  std::string source;
  std::string format;
};

// x' = A (x - c) + c + t, with c the image center.
struct AffineTransform {
  double a11 = 1, a12 = 0, a21 = 0, a22 = 1;
  double tx = 0, ty = 0;
  double cx = 0, cy = 0;

  void apply(double x, double y, double& ox, double& oy) const {
    const double rx = x - cx, ry = y - cy;
    ox = a11 * rx + a12 * ry + cx + tx;
    oy = a21 * rx + a22 * ry + cy + ty;
  }

  AffineTransform inverse() const;
};

// Continuous band-limited texture: per channel a small sum of sinusoids,
// evaluable at any real coordinate. Values stay inside [0.05, 0.95] so the
// 8-bit quantization never clips.
class SmoothTexture {
 public:
  static SmoothTexture make(Rng& rng);
  double eval(int channel, double x, double y) const;

 private:
  struct Wave {
    double fx, fy, phase, amp;
  };
  std::array<std::vector<Wave>, 3> waves_;
};

// Checkerboard with a random cell size, offset and two colors per channel.
// Discontinuous on cell boundaries; used for aliasing stress only.
class CheckerTexture {
 public:
  static CheckerTexture make(Rng& rng);
  double eval(int channel, double x, double y) const;

 private:
  double cell_ = 8.0, off_x_ = 0.0, off_y_ = 0.0;
  std::array<double, 3> color_a_{}, color_b_{};
};

// Float-precision synthetic truth; image planes are planar [3,H,W] in [0,1].
// `texture` evaluates the underlying continuous texture at any coordinate.
struct SynthSample {
  int width = 0, height = 0;
  std::vector<float> image1, image2;
  FlowData flow;
  AffineTransform transform;
  std::function<double(int channel, double x, double y)> texture;
};

// Renders a pair from an explicit transform: I1 samples the texture on the
// pixel grid, I2 samples it through the inverse transform, and the
// ground-truth flow at p is exactly g(p) - p.
SynthSample render_pair(const SynthConfig& config, const AffineTransform& g,
                        int index);

// Deterministic in (config.seed, index), with the transform drawn from the
// configured family.
SynthSample synth_pair_raw(const SynthConfig& config, int index);

// The 8-bit pipeline view of the same sample.
FlowSample synth_pair(const SynthConfig& config, int index);

struct SampleDesc {
  std::string id;
  std::string image1_path, image2_path;
  std::string flow_path;  // empty for inference-only samples
  DatasetLayout layout = DatasetLayout::flo_pairs;
};

struct DatasetIndex {
  DatasetLayout layout = DatasetLayout::flo_pairs;
  std::vector<SampleDesc> samples;
};

// Enumerates a dataset directory in stable lexicographic order. Samples with
// no ground-truth file are flagged inference-only (empty flow_path).
DatasetIndex ingest_dataset(const std::string& root, DatasetLayout layout);

FlowSample load_sample(const SampleDesc& desc);

// ---------------------------------------------------------------------------
// Tensor bridges
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> image_to_tensor(const Raster8& img) {
  const int H = img.height, W = img.width;
  std::vector<T> data(std::size_t(3) * H * W);
  const T scale = T(1) / T(255);
  for (int c = 0; c < 3; ++c) {
    const int src_c = img.channels == 1 ? 0 : c;
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        data[(std::size_t(c) * H + y) * W + x] =
            T(img.at(y, x, src_c)) * scale;
      }
    }
  }
  return Tensor<T>::from_data({1, 3, H, W}, std::move(data));
}

template <typename T>
Tensor<T> planar_image_to_tensor(const std::vector<float>& planes, int H, int W) {
  std::vector<T> data(planes.size());
  for (std::size_t i = 0; i < planes.size(); ++i) data[i] = static_cast<T>(planes[i]);
  return Tensor<T>::from_data({1, 3, H, W}, std::move(data));
}

template <typename T>
FlowField<T> flow_to_field(const FlowData& fd) {
  const std::size_t n = std::size_t(fd.width) * fd.height;
  std::vector<T> planar(n * 2);
  for (std::size_t i = 0; i < n; ++i) {
    planar[i] = static_cast<T>(fd.u[i]);
    planar[n + i] = static_cast<T>(fd.v[i]);
  }
  Tensor<T> mask;
  if (!fd.valid.empty()) {
    std::vector<T> m(n);
    for (std::size_t i = 0; i < n; ++i) m[i] = fd.valid[i] ? T(1) : T(0);
    mask = Tensor<T>::from_data({1, 1, fd.height, fd.width}, std::move(m));
  }
  return FlowField<T>(
      Tensor<T>::from_data({1, 2, fd.height, fd.width}, std::move(planar)),
      std::move(mask));
}

template <typename T>
FlowData field_to_flow(const FlowField<T>& field) {
  FlowData fd;
  fd.width = field.width();
  fd.height = field.height();
  const std::size_t n = std::size_t(fd.width) * fd.height;
  fd.u.resize(n);
  fd.v.resize(n);
  const T* u = field.flow.data().data();
  const T* v = u + n;
  for (std::size_t i = 0; i < n; ++i) {
    fd.u[i] = static_cast<float>(u[i]);
    fd.v[i] = static_cast<float>(v[i]);
  }
  if (field.valid.defined()) {
    fd.valid.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      fd.valid[i] = field.valid.data()[i] != T(0) ? 1 : 0;
  }
  return fd;
}

}  // namespace sciflow
