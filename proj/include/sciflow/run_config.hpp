#pragma once

// Flat key=value run configuration: one line per field, '#' comments.
// CLI flags override file values; a serialized RunConfig reproduces a run
// bit-identically in 64-bit mode.

#include <cstdint>
#include <string>

#include "sciflow/data.hpp"
#include "sciflow/losses.hpp"
#include "sciflow/model.hpp"

namespace sciflow {

struct RunConfig {
  // model
  int feature_channels = 32;
  int hidden_channels = 48;
  int correlation_radius = 3;
  int iterations = 6;
  int downsample_factor = 4;
  bool sci = false;
  // loss
  double gamma = 0.8;
  double alpha = 1.0;
  double beta = 1.0;
  std::string loss_variant = "d";
  std::string confidence_source = "none";
  // synthetic data (used unless dataset_root is set)
  int size = 32;
  double max_displacement = 4.0;
  std::string texture = "smooth_noise";
  std::string transforms = "translation";
  int train_count = 192;
  int heldout_count = 24;
  std::string dataset_root;
  std::string dataset_layout = "flo_pairs";
  // optimizer
  double lr = 1e-3;
  double momentum = 0.9;
  double clip = 1.0;
  int steps = 2000;
  int batch = 2;
  int eval_every = 250;
  int log_every = 25;
  // misc
  std::uint64_t seed = 0;
  std::string precision = "f32";  // f32 | f64
  std::string out_dir = "run";

  ModelConfig model_config() const {
    ModelConfig m;
    m.feature_channels = feature_channels;
    m.hidden_channels = hidden_channels;
    m.correlation_radius = correlation_radius;
    m.iterations = iterations;
    m.sci_enabled = sci;
    m.downsample_factor = downsample_factor;
    m.seed = seed;
    return m;
  }

  LossConfig loss_config() const {
    LossConfig l;
    l.gamma = gamma;
    l.alpha = alpha;
    l.beta = beta;
    l.variant = parse_rfl_variant(loss_variant);
    l.confidence_source = parse_confidence_source(confidence_source);
    return l;
  }

  SynthConfig synth_config() const {
    SynthConfig s;
    s.width = size;
    s.height = size;
    s.max_displacement = max_displacement;
    s.texture = parse_texture_kind(texture);
    s.transforms = parse_transform_family(transforms);
    s.seed = seed;
    s.count = train_count + heldout_count;
    return s;
  }

  void validate() const;
};

// Applies `key=value`; unknown keys raise ArgumentError.
void apply_config_entry(RunConfig& config, const std::string& key,
                        const std::string& value);

RunConfig parse_run_config_file(const std::string& path);

// Canonical serialization: fixed key order, round-trip-exact numbers.
std::string serialize_run_config(const RunConfig& config);

// Table 2 style presets: baseline, sci, sci_rfl.
void apply_variant_preset(RunConfig& config, const std::string& variant);

}  // namespace sciflow
