#pragma once

// Versioned binary checkpoint container.
//
//   bytes 0-3   magic "SCFW"
//   4-7         u32 format version (currently 1)
//   8           u8 element width: 4 = float32, 8 = float64
//   9-12        u32 config block length, then that many bytes of
//               key=value lines describing the ModelConfig
//   ...         u32 tensor count, then per tensor:
//               u32 name length, name bytes,
//               u32 ndim, i32 dims[ndim],
//               raw little-endian element data
//
// Loading converts elements to the requested precision.

#include <cstdint>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sciflow/errors.hpp"
#include "sciflow/flow_io.hpp"
#include "sciflow/model.hpp"

namespace sciflow {

inline constexpr char kCheckpointMagic[4] = {'S', 'C', 'F', 'W'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::string serialize_model_config(const ModelConfig& c) {
  std::ostringstream os;
  os << "feature_channels=" << c.feature_channels << "\n";
  os << "hidden_channels=" << c.hidden_channels << "\n";
  os << "correlation_radius=" << c.correlation_radius << "\n";
  os << "iterations=" << c.iterations << "\n";
  os << "sci_enabled=" << (c.sci_enabled ? 1 : 0) << "\n";
  os << "downsample_factor=" << c.downsample_factor << "\n";
  os << "seed=" << c.seed << "\n";
  return os.str();
}

inline ModelConfig parse_model_config(const std::string& text) {
  ModelConfig c;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError("checkpoint config: malformed line '" + line + "'");
    }
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "feature_channels") c.feature_channels = std::stoi(value);
    else if (key == "hidden_channels") c.hidden_channels = std::stoi(value);
    else if (key == "correlation_radius") c.correlation_radius = std::stoi(value);
    else if (key == "iterations") c.iterations = std::stoi(value);
    else if (key == "sci_enabled") c.sci_enabled = std::stoi(value) != 0;
    else if (key == "downsample_factor") c.downsample_factor = std::stoi(value);
    else if (key == "seed") c.seed = std::stoull(value);
    else throw FormatError("checkpoint config: unknown key '" + key + "'");
  }
  return c;
}

namespace detail {

template <typename V>
void write_pod(std::FILE* f, const V& v) {
  if (std::fwrite(&v, sizeof(V), 1, f) != 1) {
    throw IoError("checkpoint: write failed");
  }
}

template <typename V>
V read_pod(std::FILE* f) {
  V v{};
  if (std::fread(&v, sizeof(V), 1, f) != 1) {
    throw LengthError("checkpoint: truncated file");
  }
  return v;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const FlowModel<T>& model) {
  auto f = detail::open_or_throw(path, "wb");
  if (std::fwrite(kCheckpointMagic, 1, 4, f.get()) != 4) {
    throw IoError("checkpoint: write failed");
  }
  detail::write_pod(f.get(), kCheckpointVersion);
  detail::write_pod(f.get(), static_cast<std::uint8_t>(sizeof(T)));
  const std::string config = serialize_model_config(model.config());
  detail::write_pod(f.get(), static_cast<std::uint32_t>(config.size()));
  if (std::fwrite(config.data(), 1, config.size(), f.get()) != config.size()) {
    throw IoError("checkpoint: write failed");
  }
  detail::write_pod(f.get(),
                    static_cast<std::uint32_t>(model.parameters().size()));
  for (const auto& [name, tensor] : model.parameters()) {
    detail::write_pod(f.get(), static_cast<std::uint32_t>(name.size()));
    if (std::fwrite(name.data(), 1, name.size(), f.get()) != name.size()) {
      throw IoError("checkpoint: write failed");
    }
    detail::write_pod(f.get(), static_cast<std::uint32_t>(tensor.shape().size()));
    for (int d : tensor.shape()) detail::write_pod(f.get(), static_cast<std::int32_t>(d));
    const auto data = tensor.data();
    if (std::fwrite(data.data(), sizeof(T), data.size(), f.get()) != data.size()) {
      throw IoError("checkpoint: write failed");
    }
  }
}

template <typename T>
FlowModel<T> load_checkpoint(const std::string& path) {
  auto f = detail::open_or_throw(path, "rb");
  char magic[4];
  if (std::fread(magic, 1, 4, f.get()) != 4 ||
      std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw FormatError("'" + path + "': not a checkpoint file");
  }
  const auto version = detail::read_pod<std::uint32_t>(f.get());
  if (version != kCheckpointVersion) {
    throw FormatError("'" + path + "': unsupported checkpoint version " +
                      std::to_string(version));
  }
  const auto elem_width = detail::read_pod<std::uint8_t>(f.get());
  if (elem_width != 4 && elem_width != 8) {
    throw FormatError("'" + path + "': bad element width " +
                      std::to_string(int(elem_width)));
  }
  const auto config_len = detail::read_pod<std::uint32_t>(f.get());
  std::string config_text(config_len, '\0');
  if (config_len &&
      std::fread(config_text.data(), 1, config_len, f.get()) != config_len) {
    throw LengthError("'" + path + "': truncated checkpoint config");
  }
  FlowModel<T> model(parse_model_config(config_text));

  std::map<std::string, Tensor<T>*> by_name;
  for (auto& [name, tensor] : model.parameters()) by_name[name] = &tensor;

  const auto count = detail::read_pod<std::uint32_t>(f.get());
  if (count != model.parameters().size()) {
    throw FormatError("'" + path + "': tensor count " + std::to_string(count) +
                      " does not match the model (" +
                      std::to_string(model.parameters().size()) + ")");
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = detail::read_pod<std::uint32_t>(f.get());
    std::string name(name_len, '\0');
    if (std::fread(name.data(), 1, name_len, f.get()) != name_len) {
      throw LengthError("'" + path + "': truncated tensor name");
    }
    const auto ndim = detail::read_pod<std::uint32_t>(f.get());
    Shape shape(ndim);
    for (auto& d : shape) d = detail::read_pod<std::int32_t>(f.get());
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw FormatError("'" + path + "': unknown tensor '" + name + "'");
    }
    if (it->second->shape() != shape) {
      throw FormatError("'" + path + "': tensor '" + name + "' has shape " +
                        shape_str(shape) + ", expected " +
                        shape_str(it->second->shape()));
    }
    const std::size_t n = static_cast<std::size_t>(shape_numel(shape));
    auto dst = it->second->mutable_data();
    if (elem_width == 4) {
      std::vector<float> buf(n);
      if (std::fread(buf.data(), 4, n, f.get()) != n) {
        throw LengthError("'" + path + "': truncated tensor data");
      }
      for (std::size_t j = 0; j < n; ++j) dst[j] = static_cast<T>(buf[j]);
    } else {
      std::vector<double> buf(n);
      if (std::fread(buf.data(), 8, n, f.get()) != n) {
        throw LengthError("'" + path + "': truncated tensor data");
      }
      for (std::size_t j = 0; j < n; ++j) dst[j] = static_cast<T>(buf[j]);
    }
  }
  return model;
}

}  // namespace sciflow
