#pragma once

// Training losses: per-iteration L1 flow loss, decayed sequence combination,
// the ground-truth confidence map, and the confidence-weighted regression
// focal loss with its ablation variants.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "sciflow/errors.hpp"
#include "sciflow/flow_ops.hpp"
#include "sciflow/tensor.hpp"

namespace sciflow {

// Ablation rows of the loss study:
//   a  plain L1                    |f_gt - f_i|
//   b  focal weight only           alpha*(1-M)^beta * |.|
//   c  inverted focus              (1 + alpha*M^beta) * |.|
//   d  regression focal loss       (1 + alpha*(1-M)^beta) * |.|
enum class RflVariant { a, b, c, d };

enum class ConfidenceSource { none, per_iteration, final_iteration };

struct LossConfig {
  double gamma = 0.8;  // sequence decay, in (0,1)
  double alpha = 1.0;
  double beta = 1.0;
  RflVariant variant = RflVariant::d;
  ConfidenceSource confidence_source = ConfidenceSource::final_iteration;
};

inline RflVariant parse_rfl_variant(const std::string& s) {
  if (s == "a") return RflVariant::a;
  if (s == "b") return RflVariant::b;
  if (s == "c") return RflVariant::c;
  if (s == "d") return RflVariant::d;
  throw ArgumentError("unknown loss variant '" + s + "' (expected a, b, c or d)");
}

inline std::string to_string(RflVariant v) {
  switch (v) {
    case RflVariant::a: return "a";
    case RflVariant::b: return "b";
    case RflVariant::c: return "c";
    case RflVariant::d: return "d";
  }
  return "?";
}

inline ConfidenceSource parse_confidence_source(const std::string& s) {
  if (s == "none") return ConfidenceSource::none;
  if (s == "per_iteration") return ConfidenceSource::per_iteration;
  if (s == "final_iteration") return ConfidenceSource::final_iteration;
  throw ArgumentError("unknown confidence source '" + s +
                      "' (expected none, per_iteration or final_iteration)");
}

inline std::string to_string(ConfidenceSource s) {
  switch (s) {
    case ConfidenceSource::none: return "none";
    case ConfidenceSource::per_iteration: return "per_iteration";
    case ConfidenceSource::final_iteration: return "final_iteration";
  }
  return "?";
}

// Ground-truth confidence: per pixel exp(-(du^2 + dv^2)). The prediction is
// detached first; the map weights the loss, it is not an optimization target.
template <typename T>
struct ConfidenceMap {
  Tensor<T> map;  // [B,1,H,W], values in (0,1]
};

template <typename T>
ConfidenceMap<T> confidence_map(const FlowField<T>& f_gt, const FlowField<T>& f_pred) {
  detail::require_same_shape("confidence_map", f_gt.flow, f_pred.flow);
  Tensor<T> err = sum_channels(square(sub(f_gt.flow, f_pred.flow.detach())));
  return ConfidenceMap<T>{exp(mul_scalar(err, T(-1)))};
}

namespace detail {

// Mean over valid pixels of the per-pixel map [B,1,H,W]. Invalid pixels
// contribute to neither numerator nor denominator.
template <typename T>
Tensor<T> masked_pixel_mean(const Tensor<T>& per_pixel, const Tensor<T>& valid) {
  if (!valid.defined()) return mean(per_pixel);
  require_same_shape("masked_pixel_mean", per_pixel, valid);
  std::int64_t count = 0;
  for (T v : valid.data()) count += (v != T(0));
  if (count == 0) {
    throw NoValidPixelsError("loss reduction: valid mask has no valid pixels");
  }
  return mul_scalar(sum(mul(per_pixel, valid)), T(1) / static_cast<T>(count));
}

// |weight * (gt - pred)| summed over the two flow channels, per pixel.
// An undefined weight means weight 1 and skips the multiplication.
template <typename T>
Tensor<T> weighted_l1_pixel_map(const FlowField<T>& f_gt, const FlowField<T>& f_i,
                                const Tensor<T>& weight) {
  require_same_shape("flow loss", f_gt.flow, f_i.flow);
  Tensor<T> residual = sub(f_gt.flow, f_i.flow);
  if (weight.defined()) residual = mul(repeat_channels(weight, 2), residual);
  return sum_channels(abs(residual));
}

}  // namespace detail

// Plain per-iteration loss: mean over valid pixels of |du| + |dv|.
template <typename T>
Tensor<T> l1_flow_loss(const FlowField<T>& f_gt, const FlowField<T>& f_i) {
  return detail::masked_pixel_mean(
      detail::weighted_l1_pixel_map(f_gt, f_i, Tensor<T>()), f_gt.valid);
}

// Per-pixel RFL weight for the configured variant. M must be detached;
// alpha = 0 under variant d leaves the weight exactly 1.
template <typename T>
Tensor<T> rfl_weight(const ConfidenceMap<T>& m, const LossConfig& config) {
  const T alpha = static_cast<T>(config.alpha);
  const T beta = static_cast<T>(config.beta);
  switch (config.variant) {
    case RflVariant::a:
      return Tensor<T>();
    case RflVariant::b:
      return mul_scalar(
          pow_scalar(add_scalar(mul_scalar(m.map, T(-1)), T(1)), beta), alpha);
    case RflVariant::c:
      return add_scalar(mul_scalar(pow_scalar(m.map, beta), alpha), T(1));
    case RflVariant::d:
      return add_scalar(
          mul_scalar(pow_scalar(add_scalar(mul_scalar(m.map, T(-1)), T(1)), beta),
                     alpha),
          T(1));
  }
  throw ArgumentError("rfl_weight: unknown variant");
}

// Pre-reduction per-pixel loss map [B,1,H,W]; exposed for the pointwise
// dominance property (variant d >= variant a wherever alpha > 0).
template <typename T>
Tensor<T> rfl_pixel_loss(const FlowField<T>& f_gt, const FlowField<T>& f_i,
                         const ConfidenceMap<T>& m, const LossConfig& config) {
  return detail::weighted_l1_pixel_map(f_gt, f_i, rfl_weight(m, config));
}

template <typename T>
Tensor<T> rfl_loss(const FlowField<T>& f_gt, const FlowField<T>& f_i,
                   const ConfidenceMap<T>& m, const LossConfig& config) {
  return detail::masked_pixel_mean(rfl_pixel_loss(f_gt, f_i, m, config),
                                   f_gt.valid);
}

// Decayed combination over iterations: sum_i gamma^(N-i) * l_i.
template <typename T>
Tensor<T> sequence_loss(const std::vector<Tensor<T>>& per_iter_losses,
                        double gamma) {
  if (per_iter_losses.empty()) {
    throw ArgumentError("sequence_loss: empty loss sequence");
  }
  if (!(gamma > 0.0 && gamma < 1.0)) {
    throw ArgumentError("sequence_loss: gamma must be in (0,1), got " +
                        std::to_string(gamma));
  }
  const int n = static_cast<int>(per_iter_losses.size());
  Tensor<T> total;
  for (int i = 0; i < n; ++i) {
    Tensor<T> term = mul_scalar(per_iter_losses[static_cast<std::size_t>(i)],
                                static_cast<T>(std::pow(gamma, double(n - 1 - i))));
    total = i == 0 ? term : add(total, term);
  }
  return total;
}

// Full training loss over an iteration trace. The confidence source selects
// which prediction derives M: the final iteration's map reused for every
// term, a fresh map per iteration, or none (plain sequence loss).
template <typename T>
Tensor<T> apply_confidence_schedule(const std::vector<FlowField<T>>& trace,
                                    const FlowField<T>& f_gt,
                                    const LossConfig& config) {
  if (trace.empty()) {
    throw ArgumentError("apply_confidence_schedule: empty iteration trace");
  }
  std::vector<Tensor<T>> terms;
  terms.reserve(trace.size());
  switch (config.confidence_source) {
    case ConfidenceSource::none: {
      for (const auto& f : trace) terms.push_back(l1_flow_loss(f_gt, f));
      break;
    }
    case ConfidenceSource::final_iteration: {
      ConfidenceMap<T> m = confidence_map(f_gt, trace.back());
      for (const auto& f : trace) terms.push_back(rfl_loss(f_gt, f, m, config));
      break;
    }
    case ConfidenceSource::per_iteration: {
      for (const auto& f : trace) {
        ConfidenceMap<T> m = confidence_map(f_gt, f);
        terms.push_back(rfl_loss(f_gt, f, m, config));
      }
      break;
    }
  }
  return sequence_loss(terms, config.gamma);
}

}  // namespace sciflow
