#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "sciflow/data.hpp"
#include "sciflow/flow_io.hpp"
#include "sciflow/flow_ops.hpp"
#include "support/test_util.hpp"

using namespace sciflow;
namespace fs = std::filesystem;

namespace {

SynthConfig small_config(TransformFamily family = TransformFamily::translation,
                         TextureKind texture = TextureKind::smooth_noise) {
  SynthConfig c;
  c.width = 24;
  c.height = 24;
  c.max_displacement = 3.0;
  c.transforms = family;
  c.texture = texture;
  c.seed = 11;
  return c;
}

Raster8 tiny_png(int w, int h, std::uint8_t fill) {
  Raster8 img;
  img.width = w;
  img.height = h;
  img.channels = 3;
  img.pixels.assign(std::size_t(w) * h * 3, fill);
  return img;
}

void write_zero_flo(const std::string& path, int w, int h) {
  FlowField<float> f(Tensor<float>::zeros({1, 2, h, w}));
  write_flo(path, f);
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("identity transform: equal frames and zero flow") {
  AffineTransform identity;
  identity.cx = 11.5;
  identity.cy = 11.5;
  SynthSample s = render_pair(small_config(), identity, 0);
  CHECK(std::memcmp(s.image1.data(), s.image2.data(),
                    s.image1.size() * sizeof(float)) == 0);
  for (auto v : s.flow.u) CHECK(v == 0.0f);
  for (auto v : s.flow.v) CHECK(v == 0.0f);
}

TEST_CASE("pure translation (2,0): constant flow and shifted interior") {
  AffineTransform g;
  g.cx = 11.5;
  g.cy = 11.5;
  g.tx = 2.0;
  SynthSample s = render_pair(small_config(), g, 3);
  for (auto v : s.flow.u) CHECK(v == doctest::Approx(2.0f).epsilon(1e-6));
  for (auto v : s.flow.v) CHECK(v == doctest::Approx(0.0f).scale(1.0));
  // I2(x) = T(x - 2) = I1(x - 2) on the overlap.
  const int H = s.height, W = s.width;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 2; x < W; ++x) {
        CHECK(s.image2[(std::size_t(c) * H + y) * W + x] ==
              doctest::Approx(s.image1[(std::size_t(c) * H + y) * W + x - 2])
                  .epsilon(1e-6));
      }
}

TEST_CASE("same (seed, index) reproduces the sample bit-identically") {
  const SynthConfig cfg = small_config(TransformFamily::affine);
  FlowSample a = synth_pair(cfg, 5);
  FlowSample b = synth_pair(cfg, 5);
  CHECK(a.image1.pixels == b.image1.pixels);
  CHECK(a.image2.pixels == b.image2.pixels);
  CHECK(std::memcmp(a.flow_gt->u.data(), b.flow_gt->u.data(),
                    a.flow_gt->u.size() * sizeof(float)) == 0);
  FlowSample c = synth_pair(cfg, 6);
  CHECK(a.image1.pixels != c.image1.pixels);
}

TEST_CASE("continuous texture is consistent with the ground-truth flow") {
  // At q = p + flow(p) the inverse transform lands back on p, so the
  // continuous frame-2 content equals I1 exactly; catches any sign or
  // inverse mix-up in the generator.
  for (auto family : {TransformFamily::translation, TransformFamily::affine}) {
    SynthSample s = synth_pair_raw(small_config(family), 7);
    const AffineTransform g_inv = s.transform.inverse();
    const int H = s.height, W = s.width;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const std::size_t i = std::size_t(y) * W + x;
        const double qx = x + double(s.flow.u[i]);
        const double qy = y + double(s.flow.v[i]);
        double sx, sy;
        g_inv.apply(qx, qy, sx, sy);
        for (int c = 0; c < 3; ++c) {
          const double want = s.image1[(std::size_t(c) * H + y) * W + x];
          CHECK(std::abs(s.texture(c, sx, sy) - want) <= 1e-5);
        }
      }
  }
}

TEST_CASE("discrete warp of I2 by the ground-truth flow approximates I1") {
  SynthSample s = synth_pair_raw(small_config(), 9);
  const int H = s.height, W = s.width;
  Tensor<double> img2 = Tensor<double>::from_data(
      {1, 3, H, W}, std::vector<double>(s.image2.begin(), s.image2.end()));
  std::vector<double> planar(std::size_t(2) * H * W);
  for (std::size_t i = 0; i < std::size_t(H) * W; ++i) {
    planar[i] = s.flow.u[i];
    planar[std::size_t(H) * W + i] = s.flow.v[i];
  }
  Tensor<double> warped = warp(
      img2, FlowField<double>(Tensor<double>::from_data({1, 2, H, W}, planar)));
  // Interior only: border pixels may sample clamped content.
  const int m = 4;
  double max_err = 0.0;
  for (int c = 0; c < 3; ++c)
    for (int y = m; y < H - m; ++y)
      for (int x = m; x < W - m; ++x) {
        const double want = s.image1[(std::size_t(c) * H + y) * W + x];
        max_err = std::max(max_err, std::abs(warped.at({0, c, y, x}) - want));
      }
  CHECK(max_err <= 0.05);  // bilinear interpolation error on band-limited noise
}

TEST_CASE("affine transforms respect the displacement budget") {
  const SynthConfig cfg = small_config(TransformFamily::affine);
  for (int index = 0; index < 20; ++index) {
    SynthSample s = synth_pair_raw(cfg, index);
    for (std::size_t i = 0; i < s.flow.u.size(); ++i) {
      const double disp = std::hypot(double(s.flow.u[i]), double(s.flow.v[i]));
      CHECK(disp <= cfg.max_displacement + 1e-6);
    }
  }
}

TEST_CASE("checker texture stays inside [0,1] and is deterministic") {
  const SynthConfig cfg = small_config(TransformFamily::translation,
                                       TextureKind::checker);
  SynthSample a = synth_pair_raw(cfg, 0);
  SynthSample b = synth_pair_raw(cfg, 0);
  CHECK(std::memcmp(a.image1.data(), b.image1.data(),
                    a.image1.size() * sizeof(float)) == 0);
  for (auto v : a.image1) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("oversized max_displacement is rejected") {
  SynthConfig cfg = small_config();
  cfg.max_displacement = 12.0;  // min(size)/2 = 12 is not strictly below
  CHECK_THROWS_AS(synth_pair(cfg, 0), ArgumentError);
}

TEST_CASE("ingest: an empty directory yields an empty index") {
  const std::string dir = testutil::temp_dir("ingest_empty");
  for (auto layout : {DatasetLayout::sintel_like, DatasetLayout::kitti_like,
                      DatasetLayout::flo_pairs}) {
    DatasetIndex index = ingest_dataset(dir, layout);
    CHECK(index.samples.empty());
  }
}

TEST_CASE("ingest: a missing root is an IO error") {
  CHECK_THROWS_AS(ingest_dataset("/nonexistent/sciflow/root",
                                 DatasetLayout::flo_pairs),
                  IoError);
}

TEST_CASE("ingest sintel_like: consecutive frame pairs with per-frame flow") {
  const std::string dir = testutil::temp_dir("ingest_sintel");
  fs::create_directories(fs::path(dir) / "clean");
  fs::create_directories(fs::path(dir) / "flow");
  for (int i = 1; i <= 4; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%04d.png", i);
    write_png8((fs::path(dir) / "clean" / name).string(), tiny_png(4, 4, 100));
  }
  for (int i = 1; i <= 3; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%04d.flo", i);
    write_zero_flo((fs::path(dir) / "flow" / name).string(), 4, 4);
  }
  DatasetIndex index = ingest_dataset(dir, DatasetLayout::sintel_like);
  REQUIRE(index.samples.size() == 3);
  for (const auto& d : index.samples) CHECK_FALSE(d.flow_path.empty());
  CHECK(index.samples[0].id == "frame_0001");
  FlowSample s = load_sample(index.samples[0]);
  CHECK(s.flow_gt.has_value());
  CHECK(s.image1.width == 4);

  // Stable order across repeated scans.
  DatasetIndex again = ingest_dataset(dir, DatasetLayout::sintel_like);
  for (std::size_t i = 0; i < index.samples.size(); ++i) {
    CHECK(index.samples[i].image1_path == again.samples[i].image1_path);
  }
}

TEST_CASE("ingest flo_pairs: a pair without flow is inference-only") {
  const std::string dir = testutil::temp_dir("ingest_pairs");
  write_png8(dir + "/a_img1.png", tiny_png(4, 4, 10));
  write_png8(dir + "/a_img2.png", tiny_png(4, 4, 20));
  write_zero_flo(dir + "/a.flo", 4, 4);
  write_png8(dir + "/b_img1.png", tiny_png(4, 4, 30));
  write_png8(dir + "/b_img2.png", tiny_png(4, 4, 40));
  DatasetIndex index = ingest_dataset(dir, DatasetLayout::flo_pairs);
  REQUIRE(index.samples.size() == 2);
  CHECK(index.samples[0].id == "a");
  CHECK_FALSE(index.samples[0].flow_path.empty());
  CHECK(index.samples[1].id == "b");
  CHECK(index.samples[1].flow_path.empty());
  FlowSample b = load_sample(index.samples[1]);
  CHECK_FALSE(b.flow_gt.has_value());
}

TEST_CASE("ingest: foreign files are a layout error naming the first path") {
  const std::string dir = testutil::temp_dir("ingest_mixed");
  fs::create_directories(fs::path(dir) / "clean");
  write_zero_flo((fs::path(dir) / "clean" / "stray.flo").string(), 2, 2);
  CHECK_THROWS_WITH_AS(ingest_dataset(dir, DatasetLayout::sintel_like),
                       doctest::Contains("stray.flo"), LayoutError);

  const std::string dir2 = testutil::temp_dir("ingest_mixed2");
  write_png8(dir2 + "/readme.png", tiny_png(2, 2, 1));
  CHECK_THROWS_AS(ingest_dataset(dir2, DatasetLayout::flo_pairs), LayoutError);

  const std::string dir3 = testutil::temp_dir("ingest_mixed3");
  write_png8(dir3 + "/c_img1.png", tiny_png(2, 2, 1));
  CHECK_THROWS_WITH_AS(ingest_dataset(dir3, DatasetLayout::flo_pairs),
                       doctest::Contains("c_img1.png"), LayoutError);
}

TEST_CASE("ingest kitti_like: pairs by id with 16-bit flow maps") {
  const std::string dir = testutil::temp_dir("ingest_kitti");
  fs::create_directories(fs::path(dir) / "image_2");
  fs::create_directories(fs::path(dir) / "flow_occ");
  write_png8((fs::path(dir) / "image_2" / "000000_10.png").string(),
             tiny_png(6, 4, 50));
  write_png8((fs::path(dir) / "image_2" / "000000_11.png").string(),
             tiny_png(6, 4, 60));
  FlowField<float> gt(Tensor<float>::zeros({1, 2, 4, 6}),
                      Tensor<float>::full({1, 1, 4, 6}, 1.0f));
  write_kitti_png((fs::path(dir) / "flow_occ" / "000000_10.png").string(), gt);
  DatasetIndex index = ingest_dataset(dir, DatasetLayout::kitti_like);
  REQUIRE(index.samples.size() == 1);
  FlowSample s = load_sample(index.samples[0]);
  REQUIRE(s.flow_gt.has_value());
  CHECK_FALSE(s.flow_gt->valid.empty());
  CHECK(s.flow_gt->u[0] == 0.0f);
}

TEST_CASE("image/flow tensor bridges round-trip") {
  Rng rng(31);
  FlowData fd;
  fd.width = 3;
  fd.height = 2;
  fd.u = {1.5f, -2.0f, 0.0f, 3.0f, 4.0f, -1.0f};
  fd.v = {0.5f, 0.25f, -0.75f, 1.0f, 0.0f, 2.0f};
  fd.valid = {1, 0, 1, 1, 1, 0};
  FlowField<double> field = flow_to_field<double>(fd);
  CHECK(field.flow.at({0, 0, 0, 1}) == -2.0);
  CHECK(field.valid.at({0, 0, 0, 1}) == 0.0);
  FlowData back = field_to_flow(field);
  CHECK(back.u == fd.u);
  CHECK(back.v == fd.v);
  CHECK(back.valid == fd.valid);
}

}  // TEST_SUITE
