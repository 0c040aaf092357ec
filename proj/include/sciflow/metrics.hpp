#pragma once

// Evaluation metrics (EPE, Fl-all) and analysis maps (per-pixel error map,
// grayscale confidence/error renders). These read tensor values only and
// never touch the gradient graph.

#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sciflow/errors.hpp"
#include "sciflow/flow_ops.hpp"
#include "sciflow/losses.hpp"
#include "sciflow/raster.hpp"

namespace sciflow {

struct EvalReport {
  double epe_mean = 0.0;
  double fl_all = 0.0;  // percent
  std::int64_t pixel_count = 0;
  std::vector<double> per_iteration_epe;

  std::string to_text() const {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(6);
    os << "epe_mean=" << epe_mean << "\n";
    os << "fl_all=" << fl_all << "\n";
    os << "pixel_count=" << pixel_count << "\n";
    if (!per_iteration_epe.empty()) {
      os << "per_iteration_epe=";
      for (std::size_t i = 0; i < per_iteration_epe.size(); ++i) {
        if (i) os << ',';
        os << per_iteration_epe[i];
      }
      os << "\n";
    }
    return os.str();
  }
};

namespace detail {

template <typename T>
void require_metric_shapes(const char* op, const FlowField<T>& pred,
                           const FlowField<T>& gt) {
  require_same_shape(op, pred.flow, gt.flow);
}

template <typename T>
bool pixel_valid(const FlowField<T>& gt, std::int64_t b, std::int64_t i,
                 std::int64_t plane) {
  if (!gt.valid.defined()) return true;
  return gt.valid.data()[static_cast<std::size_t>(b * plane + i)] != T(0);
}

}  // namespace detail

// Mean over valid pixels of the per-pixel Euclidean flow error.
template <typename T>
double epe(const FlowField<T>& f_pred, const FlowField<T>& f_gt) {
  detail::require_metric_shapes("epe", f_pred, f_gt);
  const int B = f_pred.batch(), H = f_pred.height(), W = f_pred.width();
  const std::int64_t plane = std::int64_t(H) * W;
  const T* p = f_pred.flow.data().data();
  const T* g = f_gt.flow.data().data();
  double acc = 0.0;
  std::int64_t count = 0;
  for (int b = 0; b < B; ++b) {
    const T* pu = p + std::int64_t(b) * 2 * plane;
    const T* pv = pu + plane;
    const T* gu = g + std::int64_t(b) * 2 * plane;
    const T* gv = gu + plane;
    for (std::int64_t i = 0; i < plane; ++i) {
      if (!detail::pixel_valid(f_gt, b, i, plane)) continue;
      const double du = double(pu[i]) - double(gu[i]);
      const double dv = double(pv[i]) - double(gv[i]);
      acc += std::sqrt(du * du + dv * dv);
      ++count;
    }
  }
  if (count == 0) throw NoValidPixelsError("epe: no valid pixels");
  return acc / double(count);
}

// KITTI outlier percentage: a valid pixel is an outlier when its EPE exceeds
// 3 px and also exceeds 5% of the ground-truth flow magnitude.
template <typename T>
double fl_all(const FlowField<T>& f_pred, const FlowField<T>& f_gt,
              double px_threshold = 3.0, double rel_threshold = 0.05) {
  detail::require_metric_shapes("fl_all", f_pred, f_gt);
  const int B = f_pred.batch(), H = f_pred.height(), W = f_pred.width();
  const std::int64_t plane = std::int64_t(H) * W;
  const T* p = f_pred.flow.data().data();
  const T* g = f_gt.flow.data().data();
  std::int64_t outliers = 0, count = 0;
  for (int b = 0; b < B; ++b) {
    const T* pu = p + std::int64_t(b) * 2 * plane;
    const T* pv = pu + plane;
    const T* gu = g + std::int64_t(b) * 2 * plane;
    const T* gv = gu + plane;
    for (std::int64_t i = 0; i < plane; ++i) {
      if (!detail::pixel_valid(f_gt, b, i, plane)) continue;
      const double du = double(pu[i]) - double(gu[i]);
      const double dv = double(pv[i]) - double(gv[i]);
      const double err = std::sqrt(du * du + dv * dv);
      const double mag = std::sqrt(double(gu[i]) * double(gu[i]) +
                                   double(gv[i]) * double(gv[i]));
      if (err > px_threshold && err > rel_threshold * mag) ++outliers;
      ++count;
    }
  }
  if (count == 0) throw NoValidPixelsError("fl_all: no valid pixels");
  return 100.0 * double(outliers) / double(count);
}

// Per-pixel EPE as a [B,1,H,W] tensor (no gradient tracking).
template <typename T>
Tensor<T> error_map(const FlowField<T>& f_pred, const FlowField<T>& f_gt) {
  detail::require_metric_shapes("error_map", f_pred, f_gt);
  const int B = f_pred.batch(), H = f_pred.height(), W = f_pred.width();
  const std::int64_t plane = std::int64_t(H) * W;
  const T* p = f_pred.flow.data().data();
  const T* g = f_gt.flow.data().data();
  std::vector<T> out(std::size_t(B) * plane);
  for (int b = 0; b < B; ++b) {
    const T* pu = p + std::int64_t(b) * 2 * plane;
    const T* pv = pu + plane;
    const T* gu = g + std::int64_t(b) * 2 * plane;
    const T* gv = gu + plane;
    for (std::int64_t i = 0; i < plane; ++i) {
      const double du = double(pu[i]) - double(gu[i]);
      const double dv = double(pv[i]) - double(gv[i]);
      out[std::size_t(b * plane + i)] = static_cast<T>(std::sqrt(du * du + dv * dv));
    }
  }
  return Tensor<T>::from_data({B, 1, H, W}, std::move(out));
}

// Grayscale render: intensity = round(255 * clamp((v - lo) / (hi - lo), 0, 1)).
// Only the first batch entry is rendered.
template <typename T>
Raster8 render_gray(const Tensor<T>& map, double lo, double hi) {
  detail::require_rank4("render_gray", "map", map);
  if (map.dim(1) != 1) {
    throw ShapeError("render_gray: map must be single-channel, got " +
                     shape_str(map.shape()));
  }
  if (!(hi > lo)) throw ArgumentError("render_gray: hi must exceed lo");
  const int H = map.dim(2), W = map.dim(3);
  Raster8 img;
  img.width = W;
  img.height = H;
  img.channels = 1;
  img.pixels.resize(std::size_t(H) * W);
  const T* v = map.data().data();
  for (std::int64_t i = 0; i < std::int64_t(H) * W; ++i) {
    double t = (double(v[i]) - lo) / (hi - lo);
    t = t < 0.0 ? 0.0 : (t > 1.0 ? 1.0 : t);
    img.pixels[static_cast<std::size_t>(i)] =
        static_cast<std::uint8_t>(std::lround(255.0 * t));
  }
  return img;
}

// Confidence in (0,1] maps linearly onto black..white; M = 1 renders white.
template <typename T>
Raster8 confidence_render(const ConfidenceMap<T>& m) {
  return render_gray(m.map, 0.0, 1.0);
}

// Error map render: zero error renders black, errors at or past `max_epe`
// saturate to white. With no max given the image maximum is used.
template <typename T>
Raster8 error_render(const Tensor<T>& epe_map,
                       std::optional<double> max_epe = std::nullopt) {
  double hi = max_epe.value_or(0.0);
  if (!max_epe) {
    for (auto v : epe_map.data()) hi = std::max(hi, double(v));
    if (hi <= 0.0) hi = 1.0;  // degenerate all-zero map renders black
  }
  return render_gray(epe_map, 0.0, hi);
}

}  // namespace sciflow
