#pragma once

// Core differentiable flow mechanisms: flow-based warping, the self-assessed
// flow-quality map (SCI map), and local-window correlation features.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "sciflow/errors.hpp"
#include "sciflow/tensor.hpp"

namespace sciflow {

// Dense 2-channel displacement map in pixels: channel 0 = horizontal u,
// channel 1 = vertical v. `valid`, when defined, is a 0/1 mask [B,1,H,W].
template <typename T>
struct FlowField {
  Tensor<T> flow;
  Tensor<T> valid;  // undefined means all pixels valid

  FlowField() = default;
  explicit FlowField(Tensor<T> f, Tensor<T> v = Tensor<T>())
      : flow(std::move(f)), valid(std::move(v)) {
    detail::require_rank4("FlowField", "flow", flow);
    if (flow.dim(1) != 2) {
      throw ShapeError("FlowField: flow axis 1 must be 2 (u,v), got " +
                       shape_str(flow.shape()));
    }
    if (valid.defined()) {
      detail::require_rank4("FlowField", "valid", valid);
      if (valid.dim(0) != flow.dim(0) || valid.dim(1) != 1 ||
          valid.dim(2) != flow.dim(2) || valid.dim(3) != flow.dim(3)) {
        throw ShapeError("FlowField: valid mask " + shape_str(valid.shape()) +
                         " does not match flow " + shape_str(flow.shape()));
      }
    }
  }

  int batch() const { return flow.dim(0); }
  int height() const { return flow.dim(2); }
  int width() const { return flow.dim(3); }
};

// Per-pixel flow-quality map in [0,1]; 1 where warped features match exactly.
template <typename T>
struct SciMap {
  Tensor<T> map;  // [B,1,H,W]
};

// Resamples `features` along the flow: output(x,y) reads the source at
// (x + u(x,y), y + v(x,y)), bilinearly, clamped at the frame border.
template <typename T>
Tensor<T> warp(const Tensor<T>& features, const FlowField<T>& flow) {
  detail::require_rank4("warp", "features", features);
  if (features.dim(0) != flow.flow.dim(0) || features.dim(2) != flow.height() ||
      features.dim(3) != flow.width()) {
    throw ShapeError("warp: features " + shape_str(features.shape()) +
                     " vs flow " + shape_str(flow.flow.shape()));
  }
  Tensor<T> grid = identity_grid<T>(features.dim(0), features.dim(2), features.dim(3));
  return bilinear_sample(features, add(grid, flow.flow));
}

// Gaussian-kernel similarity of the reference features and the warped target
// features: per pixel exp(-1/(2*sqrt(d)) * sum_c (f1 - f2w)^2) with d the
// channel count. 1 at zero difference, tending to 0 as the difference grows.
template <typename T>
SciMap<T> sci_map(const Tensor<T>& f1, const Tensor<T>& f2_warped) {
  detail::require_rank4("sci_map", "f1", f1);
  detail::require_same_shape("sci_map", f1, f2_warped);
  if (f1.dim(1) < 1) {
    throw ShapeError("sci_map: need at least one channel, got " +
                     shape_str(f1.shape()));
  }
  const T d = static_cast<T>(f1.dim(1));
  Tensor<T> ssd = sum_channels(square(sub(f1, f2_warped)));
  Tensor<T> g = exp(mul_scalar(ssd, T(-1) / (T(2) * std::sqrt(d))));
  return SciMap<T>{std::move(g)};
}

// Local correlation features: channel k holds <f1(x,y), f2(x+dx,y+dy)>/sqrt(C)
// for the k-th displacement of the (2r+1)^2 window (row-major over dy, dx),
// with out-of-frame taps clamped to the border.
template <typename T>
Tensor<T> local_correlation(const Tensor<T>& f1, const Tensor<T>& f2, int radius) {
  detail::require_rank4("local_correlation", "f1", f1);
  detail::require_same_shape("local_correlation", f1, f2);
  if (radius < 1) throw ArgumentError("local_correlation: radius must be >= 1");
  const int B = f1.dim(0), C = f1.dim(1), H = f1.dim(2), W = f1.dim(3);
  const int D = 2 * radius + 1;
  const int K = D * D;
  const T inv_norm = T(1) / std::sqrt(static_cast<T>(C));
  const std::int64_t plane = std::int64_t(H) * W;

  std::vector<T> out(std::size_t(B) * K * plane, T(0));
  const T* a = f1.data().data();
  const T* b2 = f2.data().data();
  for (int b = 0; b < B; ++b) {
    for (int dy = -radius; dy <= radius; ++dy) {
      for (int dx = -radius; dx <= radius; ++dx) {
        const int k = (dy + radius) * D + (dx + radius);
        T* out_plane = out.data() + (std::int64_t(b) * K + k) * plane;
        for (int c = 0; c < C; ++c) {
          const T* pa = a + (std::int64_t(b) * C + c) * plane;
          const T* pb = b2 + (std::int64_t(b) * C + c) * plane;
          for (int y = 0; y < H; ++y) {
            const int sy = std::clamp(y + dy, 0, H - 1);
            for (int x = 0; x < W; ++x) {
              const int sx = std::clamp(x + dx, 0, W - 1);
              out_plane[y * W + x] += pa[y * W + x] * pb[sy * W + sx];
            }
          }
        }
        for (std::int64_t i = 0; i < plane; ++i) out_plane[i] *= inv_norm;
      }
    }
  }

  auto backprop = [B, C, H, W, radius, D, K, plane, inv_norm](detail::Node<T>& self) {
    auto& p1 = self.parents[0];
    auto& p2 = self.parents[1];
    const bool need1 = p1->requires_grad;
    const bool need2 = p2->requires_grad;
    if (need1) p1->ensure_grad();
    if (need2) p2->ensure_grad();
    const T* a = p1->values.data();
    const T* b2 = p2->values.data();
    for (int b = 0; b < B; ++b) {
      for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
          const int k = (dy + radius) * D + (dx + radius);
          const T* g_plane = self.grad.data() + (std::int64_t(b) * K + k) * plane;
          for (int c = 0; c < C; ++c) {
            const std::int64_t base = (std::int64_t(b) * C + c) * plane;
            const T* pa = a + base;
            const T* pb = b2 + base;
            T* ga = need1 ? p1->grad.data() + base : nullptr;
            T* gb = need2 ? p2->grad.data() + base : nullptr;
            for (int y = 0; y < H; ++y) {
              const int sy = std::clamp(y + dy, 0, H - 1);
              for (int x = 0; x < W; ++x) {
                const int sx = std::clamp(x + dx, 0, W - 1);
                const T g = g_plane[y * W + x] * inv_norm;
                if (need1) ga[y * W + x] += g * pb[sy * W + sx];
                if (need2) gb[sy * W + sx] += g * pa[y * W + x];
              }
            }
          }
        }
      }
    }
  };
  return make_op_result<T>({B, K, H, W}, std::move(out), {f1, f2},
                           std::move(backprop));
}

}  // namespace sciflow
