#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "sciflow/data.hpp"
#include "sciflow/flow_io.hpp"

namespace fs = std::filesystem;

namespace sciflow {

TextureKind parse_texture_kind(const std::string& s) {
  if (s == "smooth_noise") return TextureKind::smooth_noise;
  if (s == "checker") return TextureKind::checker;
  throw ArgumentError("unknown texture '" + s + "'");
}

TransformFamily parse_transform_family(const std::string& s) {
  if (s == "translation") return TransformFamily::translation;
  if (s == "affine") return TransformFamily::affine;
  throw ArgumentError("unknown transform family '" + s + "'");
}

DatasetLayout parse_dataset_layout(const std::string& s) {
  if (s == "sintel_like") return DatasetLayout::sintel_like;
  if (s == "kitti_like") return DatasetLayout::kitti_like;
  if (s == "flo_pairs") return DatasetLayout::flo_pairs;
  throw ArgumentError("unknown dataset layout '" + s + "'");
}

std::string to_string(TextureKind k) {
  return k == TextureKind::smooth_noise ? "smooth_noise" : "checker";
}

std::string to_string(TransformFamily f) {
  return f == TransformFamily::translation ? "translation" : "affine";
}

std::string to_string(DatasetLayout l) {
  switch (l) {
    case DatasetLayout::sintel_like: return "sintel_like";
    case DatasetLayout::kitti_like: return "kitti_like";
    case DatasetLayout::flo_pairs: return "flo_pairs";
  }
  return "?";
}

AffineTransform AffineTransform::inverse() const {
  const double det = a11 * a22 - a12 * a21;
  if (std::abs(det) < 1e-12) {
    throw ValueError("AffineTransform: singular matrix");
  }
  AffineTransform inv;
  inv.a11 = a22 / det;
  inv.a12 = -a12 / det;
  inv.a21 = -a21 / det;
  inv.a22 = a11 / det;
  inv.cx = cx;
  inv.cy = cy;
  // Solve A (x - c) + c + t = y for x: x = A^-1 (y - c - t) + c.
  // Written in the same centered form, the inverse translation is
  // A^-1 applied to -t.
  inv.tx = inv.a11 * -tx + inv.a12 * -ty;
  inv.ty = inv.a21 * -tx + inv.a22 * -ty;
  return inv;
}

// ---------------------------------------------------------------------------
// Textures
// ---------------------------------------------------------------------------

SmoothTexture SmoothTexture::make(Rng& rng) {
  constexpr int kWaves = 5;
  constexpr double kAmpBudget = 0.45;
  constexpr double kMinFreq = 0.02, kMaxFreq = 0.09;  // cycles per pixel
  SmoothTexture t;
  for (int c = 0; c < 3; ++c) {
    std::vector<Wave> waves(kWaves);
    double amp_sum = 0.0;
    for (auto& w : waves) {
      const double f = rng.uniform(kMinFreq, kMaxFreq);
      const double theta = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
      w.fx = f * std::cos(theta);
      w.fy = f * std::sin(theta);
      w.phase = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
      w.amp = rng.uniform(0.3, 1.0);
      amp_sum += w.amp;
    }
    for (auto& w : waves) w.amp *= kAmpBudget / amp_sum;
    t.waves_[static_cast<std::size_t>(c)] = std::move(waves);
  }
  return t;
}

double SmoothTexture::eval(int channel, double x, double y) const {
  double v = 0.5;
  for (const auto& w : waves_[static_cast<std::size_t>(channel)]) {
    v += w.amp *
         std::sin(2.0 * 3.14159265358979323846 * (w.fx * x + w.fy * y) + w.phase);
  }
  return v;
}

CheckerTexture CheckerTexture::make(Rng& rng) {
  CheckerTexture t;
  t.cell_ = rng.uniform(4.0, 10.0);
  t.off_x_ = rng.uniform(0.0, t.cell_);
  t.off_y_ = rng.uniform(0.0, t.cell_);
  for (int c = 0; c < 3; ++c) {
    t.color_a_[static_cast<std::size_t>(c)] = rng.uniform(0.05, 0.45);
    t.color_b_[static_cast<std::size_t>(c)] = rng.uniform(0.55, 0.95);
  }
  return t;
}

double CheckerTexture::eval(int channel, double x, double y) const {
  const long ix = static_cast<long>(std::floor((x - off_x_) / cell_));
  const long iy = static_cast<long>(std::floor((y - off_y_) / cell_));
  const bool a = ((ix + iy) & 1) == 0;
  return a ? color_a_[static_cast<std::size_t>(channel)]
           : color_b_[static_cast<std::size_t>(channel)];
}

// ---------------------------------------------------------------------------
// Synthetic pairs
// ---------------------------------------------------------------------------

namespace {

AffineTransform sample_transform(const SynthConfig& config, Rng& rng) {
  AffineTransform g;
  g.cx = (config.width - 1) / 2.0;
  g.cy = (config.height - 1) / 2.0;
  const double m = config.max_displacement;
  if (config.transforms == TransformFamily::translation) {
    g.tx = rng.uniform(-m, m);
    g.ty = rng.uniform(-m, m);
    return g;
  }
  const double angle = rng.uniform(-0.06, 0.06);
  const double scale = 1.0 + rng.uniform(-0.05, 0.05);
  const double shear = rng.uniform(-0.03, 0.03);
  g.a11 = scale * std::cos(angle);
  g.a12 = -scale * std::sin(angle) + shear;
  g.a21 = scale * std::sin(angle);
  g.a22 = scale * std::cos(angle);
  g.tx = rng.uniform(-m / 2.0, m / 2.0);
  g.ty = rng.uniform(-m / 2.0, m / 2.0);

  // The displacement field (A-I)(p-c) + t is linear in the deviation from
  // identity, so one shrink brings the corner maximum under the budget.
  double max_disp = 0.0;
  for (int corner = 0; corner < 4; ++corner) {
    const double x = (corner & 1) ? config.width - 1.0 : 0.0;
    const double y = (corner & 2) ? config.height - 1.0 : 0.0;
    double ox, oy;
    g.apply(x, y, ox, oy);
    max_disp = std::max(max_disp, std::hypot(ox - x, oy - y));
  }
  if (max_disp > m) {
    const double lambda = 0.95 * m / max_disp;
    g.a11 = 1.0 + lambda * (g.a11 - 1.0);
    g.a12 = lambda * g.a12;
    g.a21 = lambda * g.a21;
    g.a22 = 1.0 + lambda * (g.a22 - 1.0);
    g.tx = lambda * g.tx;
    g.ty = lambda * g.ty;
  }
  return g;
}

std::uint8_t quantize(double v) {
  const double q = std::lround(v * 255.0);
  return static_cast<std::uint8_t>(q < 0.0 ? 0.0 : (q > 255.0 ? 255.0 : q));
}

Raster8 to_raster(const std::vector<float>& planes, int H, int W) {
  Raster8 img;
  img.width = W;
  img.height = H;
  img.channels = 3;
  img.pixels.resize(std::size_t(3) * H * W);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      for (int c = 0; c < 3; ++c) {
        img.pixels[(std::size_t(y) * W + x) * 3 + c] =
            quantize(planes[(std::size_t(c) * H + y) * W + x]);
      }
    }
  }
  return img;
}

}  // namespace

namespace {

void validate_synth_config(const SynthConfig& config) {
  if (config.width < 2 || config.height < 2) {
    throw ArgumentError("synth_pair: image size must be at least 2x2");
  }
  if (!(config.max_displacement <
        std::min(config.width, config.height) / 2.0)) {
    throw ArgumentError("synth_pair: max_displacement " +
                        std::to_string(config.max_displacement) +
                        " must stay below min(size)/2");
  }
}

std::function<double(int, double, double)> make_texture(const SynthConfig& config,
                                                        Rng& rng) {
  if (config.texture == TextureKind::smooth_noise) {
    return [t = SmoothTexture::make(rng)](int c, double x, double y) {
      return t.eval(c, x, y);
    };
  }
  return [t = CheckerTexture::make(rng)](int c, double x, double y) {
    return t.eval(c, x, y);
  };
}

}  // namespace

SynthSample render_pair(const SynthConfig& config, const AffineTransform& g,
                        int index) {
  validate_synth_config(config);
  Rng rng = Rng(config.seed).fork(static_cast<std::uint64_t>(index));
  auto tex = make_texture(config, rng);
  const AffineTransform g_inv = g.inverse();

  SynthSample s;
  s.width = config.width;
  s.height = config.height;
  s.transform = g;
  const int H = config.height, W = config.width;
  s.image1.resize(std::size_t(3) * H * W);
  s.image2.resize(std::size_t(3) * H * W);
  s.flow.width = W;
  s.flow.height = H;
  s.flow.u.resize(std::size_t(H) * W);
  s.flow.v.resize(std::size_t(H) * W);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      double gx, gy;
      g.apply(double(x), double(y), gx, gy);
      s.flow.u[std::size_t(y) * W + x] = static_cast<float>(gx - x);
      s.flow.v[std::size_t(y) * W + x] = static_cast<float>(gy - y);
      double sx, sy;
      g_inv.apply(double(x), double(y), sx, sy);
      for (int c = 0; c < 3; ++c) {
        s.image1[(std::size_t(c) * H + y) * W + x] =
            static_cast<float>(tex(c, double(x), double(y)));
        s.image2[(std::size_t(c) * H + y) * W + x] =
            static_cast<float>(tex(c, sx, sy));
      }
    }
  }
  s.texture = std::move(tex);
  return s;
}

SynthSample synth_pair_raw(const SynthConfig& config, int index) {
  validate_synth_config(config);
  // Transform and texture use independent per-index streams.
  Rng transform_rng = Rng(config.seed).fork(static_cast<std::uint64_t>(index)).fork(1);
  const AffineTransform g = sample_transform(config, transform_rng);
  return render_pair(config, g, index);
}

FlowSample synth_pair(const SynthConfig& config, int index) {
  SynthSample raw = synth_pair_raw(config, index);
  FlowSample sample;
  sample.image1 = to_raster(raw.image1, raw.height, raw.width);
  sample.image2 = to_raster(raw.image2, raw.height, raw.width);
  sample.flow_gt = std::move(raw.flow);
  sample.source = "synth:seed=" + std::to_string(config.seed) +
                  ":index=" + std::to_string(index);
  sample.format = "synth";
  return sample;
}

// ---------------------------------------------------------------------------
// Dataset ingestion
// ---------------------------------------------------------------------------

namespace {

bool has_extension(const fs::path& p, const char* ext) {
  return p.extension().string() == ext;
}

// Regular visible files in a directory, sorted by filename.
std::vector<fs::path> list_files(const fs::path& dir) {
  std::vector<fs::path> files;
  if (!fs::exists(dir)) return files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (!name.empty() && name[0] == '.') continue;
    files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

DatasetIndex ingest_sintel(const fs::path& root) {
  DatasetIndex index;
  index.layout = DatasetLayout::sintel_like;
  const auto frames = list_files(root / "clean");
  for (const auto& f : frames) {
    if (!has_extension(f, ".png")) {
      throw LayoutError("sintel_like: unexpected file '" + f.string() +
                        "' in clean/ (expected .png frames)");
    }
  }
  for (const auto& f : list_files(root / "flow")) {
    if (!has_extension(f, ".flo")) {
      throw LayoutError("sintel_like: unexpected file '" + f.string() +
                        "' in flow/ (expected .flo fields)");
    }
  }
  for (std::size_t i = 0; i + 1 < frames.size(); ++i) {
    SampleDesc d;
    d.layout = DatasetLayout::sintel_like;
    d.image1_path = frames[i].string();
    d.image2_path = frames[i + 1].string();
    d.id = frames[i].stem().string();
    const fs::path flo = root / "flow" / (frames[i].stem().string() + ".flo");
    if (fs::exists(flo)) d.flow_path = flo.string();
    index.samples.push_back(std::move(d));
  }
  return index;
}

DatasetIndex ingest_kitti(const fs::path& root) {
  DatasetIndex index;
  index.layout = DatasetLayout::kitti_like;
  std::vector<std::string> first_ids;
  for (const auto& f : list_files(root / "image_2")) {
    const std::string stem = f.stem().string();
    if (!has_extension(f, ".png") || stem.size() < 3 ||
        (stem.substr(stem.size() - 3) != "_10" &&
         stem.substr(stem.size() - 3) != "_11")) {
      throw LayoutError("kitti_like: unexpected file '" + f.string() +
                        "' in image_2/ (expected <id>_10.png / <id>_11.png)");
    }
    if (stem.substr(stem.size() - 3) == "_10") {
      first_ids.push_back(stem.substr(0, stem.size() - 3));
    }
  }
  for (const auto& id : first_ids) {
    SampleDesc d;
    d.layout = DatasetLayout::kitti_like;
    d.id = id;
    d.image1_path = (root / "image_2" / (id + "_10.png")).string();
    d.image2_path = (root / "image_2" / (id + "_11.png")).string();
    if (!fs::exists(d.image2_path)) {
      throw LayoutError("kitti_like: '" + d.image1_path +
                        "' has no matching second frame");
    }
    const fs::path gt = root / "flow_occ" / (id + "_10.png");
    if (fs::exists(gt)) d.flow_path = gt.string();
    index.samples.push_back(std::move(d));
  }
  return index;
}

DatasetIndex ingest_flo_pairs(const fs::path& root) {
  DatasetIndex index;
  index.layout = DatasetLayout::flo_pairs;
  std::vector<std::string> stems;
  for (const auto& f : list_files(root)) {
    const std::string name = f.filename().string();
    if (has_extension(f, ".flo")) continue;  // validated against its pair below
    if (!has_extension(f, ".png")) {
      throw LayoutError("flo_pairs: unexpected file '" + f.string() + "'");
    }
    const std::string stem = f.stem().string();
    if (stem.size() > 5 && stem.substr(stem.size() - 5) == "_img1") {
      stems.push_back(stem.substr(0, stem.size() - 5));
    } else if (stem.size() > 5 && stem.substr(stem.size() - 5) == "_img2") {
      // paired up from the _img1 side
    } else {
      throw LayoutError("flo_pairs: unexpected file '" + f.string() +
                        "' (expected <stem>_img1.png / <stem>_img2.png)");
    }
  }
  for (const auto& stem : stems) {
    SampleDesc d;
    d.layout = DatasetLayout::flo_pairs;
    d.id = stem;
    d.image1_path = (root / (stem + "_img1.png")).string();
    d.image2_path = (root / (stem + "_img2.png")).string();
    if (!fs::exists(d.image2_path)) {
      throw LayoutError("flo_pairs: '" + d.image1_path +
                        "' has no matching _img2 frame");
    }
    const fs::path flo = root / (stem + ".flo");
    if (fs::exists(flo)) d.flow_path = flo.string();
    index.samples.push_back(std::move(d));
  }
  return index;
}

}  // namespace

DatasetIndex ingest_dataset(const std::string& root, DatasetLayout layout) {
  const fs::path r(root);
  if (!fs::exists(r) || !fs::is_directory(r)) {
    throw IoError("dataset root '" + root + "' is not a readable directory");
  }
  switch (layout) {
    case DatasetLayout::sintel_like: return ingest_sintel(r);
    case DatasetLayout::kitti_like: return ingest_kitti(r);
    case DatasetLayout::flo_pairs: return ingest_flo_pairs(r);
  }
  throw ArgumentError("ingest_dataset: unknown layout");
}

FlowSample load_sample(const SampleDesc& desc) {
  FlowSample s;
  s.image1 = read_png8(desc.image1_path);
  s.image2 = read_png8(desc.image2_path);
  if (s.image1.width != s.image2.width || s.image1.height != s.image2.height) {
    throw FormatError("sample '" + desc.id + "': frame dimensions differ");
  }
  s.source = desc.image1_path;
  s.format = to_string(desc.layout);
  if (!desc.flow_path.empty()) {
    FlowField<float> field = desc.layout == DatasetLayout::kitti_like
                                 ? read_kitti_png<float>(desc.flow_path)
                                 : read_flo<float>(desc.flow_path);
    if (field.width() != s.image1.width || field.height() != s.image1.height) {
      throw FormatError("sample '" + desc.id +
                        "': flow dimensions do not match the frames");
    }
    s.flow_gt = field_to_flow(field);
  }
  return s;
}

}  // namespace sciflow
