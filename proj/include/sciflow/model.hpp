#pragma once

// Toy iterative-refinement optical-flow network. A strided convolutional
// encoder produces feature maps; a ConvGRU refines a feature-resolution flow
// field over N iterations from local correlation, the current flow and
// (optionally) the SCI quality map, which enters the GRU input as one extra
// channel. Gate convolutions are pointwise and only the candidate mixes
// spatially, keeping the parameter count in toy territory.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sciflow/errors.hpp"
#include "sciflow/flow_ops.hpp"
#include "sciflow/tensor.hpp"

namespace sciflow {

struct ModelConfig {
  int feature_channels = 32;
  int hidden_channels = 48;
  int correlation_radius = 3;
  int iterations = 6;
  bool sci_enabled = false;
  int downsample_factor = 4;
  std::uint64_t seed = 0;

  void validate() const {
    if (iterations < 1) throw ArgumentError("model: iterations must be >= 1");
    if (feature_channels < 2 || hidden_channels < 1) {
      throw ArgumentError("model: channel counts must be positive");
    }
    if (correlation_radius < 1) {
      throw ArgumentError("model: correlation radius must be >= 1");
    }
    const int s = downsample_factor;
    if (s < 1 || (s & (s - 1)) != 0) {
      throw ArgumentError("model: downsample factor must be a power of two");
    }
  }
};

template <typename T>
struct IterationTrace {
  std::vector<FlowField<T>> flows;  // input resolution, iteration 1..N
  std::vector<SciMap<T>> sci_maps;  // feature resolution; empty when disabled
};

template <typename T>
struct RefineResult {
  Tensor<T> delta_flow;  // feature resolution [B,2,h,w]
  Tensor<T> hidden;
  std::optional<SciMap<T>> sci;
};

namespace detail {

template <typename T>
struct ConvLayer {
  Tensor<T> weight, bias;
  int stride = 1, padding = 1;
};

}  // namespace detail

template <typename T>
class FlowModel {
 public:
  static constexpr int kCorrFeatureChannels = 16;
  static constexpr int kHeadChannels = 32;

  explicit FlowModel(const ModelConfig& config) : config_(config) {
    config_.validate();
    Rng rng(config_.seed);
    build(rng);
  }

  const ModelConfig& config() const { return config_; }

  std::vector<std::pair<std::string, Tensor<T>>>& parameters() { return params_; }
  const std::vector<std::pair<std::string, Tensor<T>>>& parameters() const {
    return params_;
  }

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (const auto& [name, p] : params_) n += p.numel();
    return n;
  }

  int gru_input_channels() const {
    return kCorrFeatureChannels + 2 + (config_.sci_enabled ? 1 : 0);
  }

  // Strided convolutional stack; output is [B,F,H/s,W/s].
  Tensor<T> encode_features(const Tensor<T>& image) const {
    detail::require_rank4("encode_features", "image", image);
    if (image.dim(1) != 3) {
      throw ShapeError("encode_features: expected 3 input channels, got " +
                       shape_str(image.shape()));
    }
    const int s = config_.downsample_factor;
    if (image.dim(2) % s != 0 || image.dim(3) % s != 0) {
      throw ShapeError("encode_features: input " + std::to_string(image.dim(2)) +
                       "x" + std::to_string(image.dim(3)) +
                       " is not divisible by the downsample factor " +
                       std::to_string(s) + "; pad the input first");
    }
    Tensor<T> x = image;
    for (std::size_t i = 0; i < encoder_.size(); ++i) {
      x = conv2d(x, encoder_[i].weight, encoder_[i].bias, encoder_[i].stride,
                 encoder_[i].padding);
      if (i + 1 < encoder_.size()) x = relu(x);
    }
    return x;
  }

  // Hidden state from a tanh-squashed context branch of frame 1's features.
  Tensor<T> initial_hidden(const Tensor<T>& f1) const {
    return tanh(conv2d(f1, context_.weight, context_.bias, 1, 1));
  }

  // One refinement step. flow_prev is treated as data: it is detached here
  // if the caller has not already done so.
  RefineResult<T> refine_step(const Tensor<T>& f1, const Tensor<T>& f2,
                              const Tensor<T>& flow_prev,
                              const Tensor<T>& hidden) const {
    detail::require_same_shape("refine_step", f1, f2);
    if (flow_prev.dim(1) != 2) {
      throw ShapeError("refine_step: flow axis 1 must be 2, got " +
                       shape_str(flow_prev.shape()));
    }
    if (flow_prev.dim(2) != f1.dim(2) || flow_prev.dim(3) != f1.dim(3)) {
      throw ShapeError("refine_step: flow " + shape_str(flow_prev.shape()) +
                       " vs features " + shape_str(f1.shape()));
    }
    if (hidden.dim(1) != config_.hidden_channels) {
      throw ShapeError("refine_step: hidden axis 1 must be " +
                       std::to_string(config_.hidden_channels) + ", got " +
                       shape_str(hidden.shape()));
    }
    Tensor<T> flow = flow_prev.requires_grad() ? flow_prev.detach() : flow_prev;

    Tensor<T> f2_warped = warp(f2, FlowField<T>(flow));
    Tensor<T> corr = relu(conv2d(local_correlation(f1, f2_warped,
                                                   config_.correlation_radius),
                                 corr_encoder_.weight, corr_encoder_.bias, 1, 1));

    std::optional<SciMap<T>> sci;
    std::vector<Tensor<T>> gru_in = {corr, flow};
    if (config_.sci_enabled) {
      sci = sci_map(f1, f2_warped);
      gru_in.push_back(sci->map);
    }
    Tensor<T> x = concat_channels(gru_in);

    Tensor<T> hx = concat_channels<T>({hidden, x});
    Tensor<T> z = sigmoid(conv2d(hx, gru_update_.weight, gru_update_.bias, 1, 0));
    Tensor<T> r = sigmoid(conv2d(hx, gru_reset_.weight, gru_reset_.bias, 1, 0));
    Tensor<T> q = tanh(conv2d(concat_channels<T>({mul(r, hidden), x}),
                              gru_candidate_.weight, gru_candidate_.bias, 1, 1));
    // h' = (1 - z) * h + z * q
    Tensor<T> hidden_next = add(hidden, mul(z, sub(q, hidden)));

    Tensor<T> head = relu(
        conv2d(hidden_next, head1_.weight, head1_.bias, 1, 1));
    Tensor<T> delta = conv2d(head, head2_.weight, head2_.bias, 1, 1);
    return RefineResult<T>{std::move(delta), std::move(hidden_next),
                           std::move(sci)};
  }

  IterationTrace<T> estimate_flow(const Tensor<T>& image1,
                                  const Tensor<T>& image2) const {
    return estimate_flow(image1, image2, config_.iterations);
  }

  IterationTrace<T> estimate_flow(const Tensor<T>& image1,
                                  const Tensor<T>& image2, int iterations) const {
    detail::require_same_shape("estimate_flow", image1, image2);
    if (iterations < 1) throw ArgumentError("estimate_flow: iterations must be >= 1");
    const int s = config_.downsample_factor;
    Tensor<T> f1 = encode_features(image1);
    Tensor<T> f2 = encode_features(image2);
    Tensor<T> hidden = initial_hidden(f1);
    Tensor<T> flow = Tensor<T>::zeros({f1.dim(0), 2, f1.dim(2), f1.dim(3)});

    IterationTrace<T> trace;
    trace.flows.reserve(static_cast<std::size_t>(iterations));
    for (int i = 0; i < iterations; ++i) {
      Tensor<T> flow_data = flow.requires_grad() ? flow.detach() : flow;
      RefineResult<T> step = refine_step(f1, f2, flow_data, hidden);
      flow = add(flow_data, step.delta_flow);
      hidden = step.hidden;
      Tensor<T> full = mul_scalar(upsample_bilinear(flow, s), T(s));
      trace.flows.emplace_back(std::move(full));
      if (step.sci) trace.sci_maps.push_back(std::move(*step.sci));
    }
    return trace;
  }

 private:
  void build(Rng& rng) {
    const int F = config_.feature_channels;
    const int half = std::max(F / 2, 2);
    int n_down = 0;
    for (int s = config_.downsample_factor; s > 1; s /= 2) ++n_down;

    // Encoder: one stride-2 stage per halving, then a stride-1 refinement.
    int in_ch = 3;
    int stage = 0;
    while (stage < n_down) {
      const int out_ch = stage + 1 < n_down ? half : F;
      encoder_.push_back(make_conv("encoder." + std::to_string(stage), in_ch,
                                   std::min(out_ch, F), 3, 2, 1, rng));
      in_ch = std::min(out_ch, F);
      ++stage;
    }
    if (n_down == 0) {
      encoder_.push_back(make_conv("encoder.0", 3, F, 3, 1, 1, rng));
      in_ch = F;
      stage = 1;
    }
    encoder_.push_back(
        make_conv("encoder." + std::to_string(stage), in_ch, F, 3, 1, 1, rng));

    context_ = make_conv("context", F, config_.hidden_channels, 3, 1, 1, rng);

    const int corr_raw =
        (2 * config_.correlation_radius + 1) * (2 * config_.correlation_radius + 1);
    corr_encoder_ =
        make_conv("corr_encoder", corr_raw, kCorrFeatureChannels, 3, 1, 1, rng);

    const int hx_ch = config_.hidden_channels + gru_input_channels();
    gru_update_ = make_conv("gru.update", hx_ch, config_.hidden_channels, 1, 1, 0, rng);
    gru_reset_ = make_conv("gru.reset", hx_ch, config_.hidden_channels, 1, 1, 0, rng);
    gru_candidate_ =
        make_conv("gru.candidate", hx_ch, config_.hidden_channels, 3, 1, 1, rng);

    head1_ = make_conv("head.0", config_.hidden_channels, kHeadChannels, 3, 1, 1, rng);
    head2_ = make_conv("head.1", kHeadChannels, 2, 3, 1, 1, rng);
  }

  detail::ConvLayer<T> make_conv(const std::string& name, int in_ch, int out_ch,
                                 int ksize, int stride, int padding, Rng& rng) {
    const double bound = 1.0 / std::sqrt(double(in_ch) * ksize * ksize);
    detail::ConvLayer<T> layer;
    layer.weight = random_uniform<T>({out_ch, in_ch, ksize, ksize}, rng, -bound,
                                     bound, /*requires_grad=*/true);
    layer.bias =
        random_uniform<T>({out_ch}, rng, -bound, bound, /*requires_grad=*/true);
    layer.stride = stride;
    layer.padding = padding;
    params_.emplace_back(name + ".weight", layer.weight);
    params_.emplace_back(name + ".bias", layer.bias);
    return layer;
  }

  ModelConfig config_;
  std::vector<detail::ConvLayer<T>> encoder_;
  detail::ConvLayer<T> context_, corr_encoder_;
  detail::ConvLayer<T> gru_update_, gru_reset_, gru_candidate_;
  detail::ConvLayer<T> head1_, head2_;
  std::vector<std::pair<std::string, Tensor<T>>> params_;
};

}  // namespace sciflow
