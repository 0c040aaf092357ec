#include "sciflow/run_config.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "sciflow/errors.hpp"

namespace sciflow {

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

// Ordered map doubles as the canonical serialization order.
const std::map<std::string, Field>& field_table() {
  static const std::map<std::string, Field> table = {
      {"alpha",
       {[](const RunConfig& c) { return format_double(c.alpha); },
        [](RunConfig& c, const std::string& v) { c.alpha = std::stod(v); }}},
      {"batch",
       {[](const RunConfig& c) { return std::to_string(c.batch); },
        [](RunConfig& c, const std::string& v) { c.batch = std::stoi(v); }}},
      {"beta",
       {[](const RunConfig& c) { return format_double(c.beta); },
        [](RunConfig& c, const std::string& v) { c.beta = std::stod(v); }}},
      {"clip",
       {[](const RunConfig& c) { return format_double(c.clip); },
        [](RunConfig& c, const std::string& v) { c.clip = std::stod(v); }}},
      {"confidence_source",
       {[](const RunConfig& c) { return c.confidence_source; },
        [](RunConfig& c, const std::string& v) { c.confidence_source = v; }}},
      {"correlation_radius",
       {[](const RunConfig& c) { return std::to_string(c.correlation_radius); },
        [](RunConfig& c, const std::string& v) {
          c.correlation_radius = std::stoi(v);
        }}},
      {"dataset_layout",
       {[](const RunConfig& c) { return c.dataset_layout; },
        [](RunConfig& c, const std::string& v) { c.dataset_layout = v; }}},
      {"dataset_root",
       {[](const RunConfig& c) { return c.dataset_root; },
        [](RunConfig& c, const std::string& v) { c.dataset_root = v; }}},
      {"downsample_factor",
       {[](const RunConfig& c) { return std::to_string(c.downsample_factor); },
        [](RunConfig& c, const std::string& v) {
          c.downsample_factor = std::stoi(v);
        }}},
      {"eval_every",
       {[](const RunConfig& c) { return std::to_string(c.eval_every); },
        [](RunConfig& c, const std::string& v) { c.eval_every = std::stoi(v); }}},
      {"feature_channels",
       {[](const RunConfig& c) { return std::to_string(c.feature_channels); },
        [](RunConfig& c, const std::string& v) {
          c.feature_channels = std::stoi(v);
        }}},
      {"gamma",
       {[](const RunConfig& c) { return format_double(c.gamma); },
        [](RunConfig& c, const std::string& v) { c.gamma = std::stod(v); }}},
      {"heldout_count",
       {[](const RunConfig& c) { return std::to_string(c.heldout_count); },
        [](RunConfig& c, const std::string& v) {
          c.heldout_count = std::stoi(v);
        }}},
      {"hidden_channels",
       {[](const RunConfig& c) { return std::to_string(c.hidden_channels); },
        [](RunConfig& c, const std::string& v) {
          c.hidden_channels = std::stoi(v);
        }}},
      {"iterations",
       {[](const RunConfig& c) { return std::to_string(c.iterations); },
        [](RunConfig& c, const std::string& v) { c.iterations = std::stoi(v); }}},
      {"log_every",
       {[](const RunConfig& c) { return std::to_string(c.log_every); },
        [](RunConfig& c, const std::string& v) { c.log_every = std::stoi(v); }}},
      {"loss_variant",
       {[](const RunConfig& c) { return c.loss_variant; },
        [](RunConfig& c, const std::string& v) { c.loss_variant = v; }}},
      {"lr",
       {[](const RunConfig& c) { return format_double(c.lr); },
        [](RunConfig& c, const std::string& v) { c.lr = std::stod(v); }}},
      {"max_displacement",
       {[](const RunConfig& c) { return format_double(c.max_displacement); },
        [](RunConfig& c, const std::string& v) {
          c.max_displacement = std::stod(v);
        }}},
      {"momentum",
       {[](const RunConfig& c) { return format_double(c.momentum); },
        [](RunConfig& c, const std::string& v) { c.momentum = std::stod(v); }}},
      {"out_dir",
       {[](const RunConfig& c) { return c.out_dir; },
        [](RunConfig& c, const std::string& v) { c.out_dir = v; }}},
      {"precision",
       {[](const RunConfig& c) { return c.precision; },
        [](RunConfig& c, const std::string& v) { c.precision = v; }}},
      {"sci",
       {[](const RunConfig& c) { return std::string(c.sci ? "1" : "0"); },
        [](RunConfig& c, const std::string& v) { c.sci = std::stoi(v) != 0; }}},
      {"seed",
       {[](const RunConfig& c) { return std::to_string(c.seed); },
        [](RunConfig& c, const std::string& v) { c.seed = std::stoull(v); }}},
      {"size",
       {[](const RunConfig& c) { return std::to_string(c.size); },
        [](RunConfig& c, const std::string& v) { c.size = std::stoi(v); }}},
      {"steps",
       {[](const RunConfig& c) { return std::to_string(c.steps); },
        [](RunConfig& c, const std::string& v) { c.steps = std::stoi(v); }}},
      {"texture",
       {[](const RunConfig& c) { return c.texture; },
        [](RunConfig& c, const std::string& v) { c.texture = v; }}},
      {"train_count",
       {[](const RunConfig& c) { return std::to_string(c.train_count); },
        [](RunConfig& c, const std::string& v) { c.train_count = std::stoi(v); }}},
      {"transforms",
       {[](const RunConfig& c) { return c.transforms; },
        [](RunConfig& c, const std::string& v) { c.transforms = v; }}},
  };
  return table;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

void apply_config_entry(RunConfig& config, const std::string& key,
                        const std::string& value) {
  const auto& table = field_table();
  auto it = table.find(key);
  if (it == table.end()) {
    throw ArgumentError("config: unknown key '" + key + "'");
  }
  try {
    it->second.set(config, value);
  } catch (const std::invalid_argument&) {
    throw ArgumentError("config: bad value '" + value + "' for key '" + key + "'");
  } catch (const std::out_of_range&) {
    throw ArgumentError("config: value '" + value + "' out of range for key '" +
                        key + "'");
  }
}

RunConfig parse_run_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  RunConfig config;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ArgumentError("config '" + path + "' line " + std::to_string(lineno) +
                          ": expected key=value, got '" + t + "'");
    }
    apply_config_entry(config, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return config;
}

std::string serialize_run_config(const RunConfig& config) {
  std::ostringstream os;
  for (const auto& [key, field] : field_table()) {
    os << key << "=" << field.get(config) << "\n";
  }
  return os.str();
}

void apply_variant_preset(RunConfig& config, const std::string& variant) {
  if (variant == "baseline") {
    config.sci = false;
    config.confidence_source = "none";
  } else if (variant == "sci") {
    config.sci = true;
    config.confidence_source = "none";
  } else if (variant == "sci_rfl") {
    config.sci = true;
    config.confidence_source = "final_iteration";
    config.loss_variant = "d";
  } else {
    throw ArgumentError("unknown variant '" + variant +
                        "' (expected baseline, sci or sci_rfl)");
  }
}

void RunConfig::validate() const {
  if (precision != "f32" && precision != "f64") {
    throw ArgumentError("config: precision must be f32 or f64, got '" +
                        precision + "'");
  }
  if (steps < 0) throw ArgumentError("config: steps must be >= 0");
  if (batch < 1) throw ArgumentError("config: batch must be >= 1");
  if (train_count < 1) throw ArgumentError("config: train_count must be >= 1");
  if (heldout_count < 1) throw ArgumentError("config: heldout_count must be >= 1");
  if (!(lr > 0.0)) throw ArgumentError("config: lr must be positive");
  if (momentum < 0.0 || momentum >= 1.0) {
    throw ArgumentError("config: momentum must be in [0,1)");
  }
  if (!(clip > 0.0)) throw ArgumentError("config: clip must be positive");
  model_config().validate();
  loss_config();   // parses variant and source
  synth_config();  // parses texture and transform names
}

}  // namespace sciflow
