#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "sciflow/flow_io.hpp"
#include "sciflow/raster.hpp"
#include "support/test_util.hpp"

using namespace sciflow;
namespace fs = std::filesystem;

namespace {

FlowField<float> make_field(int H, int W, Rng& rng, bool quantized = false,
                            bool with_mask = false) {
  const std::size_t n = std::size_t(H) * W;
  std::vector<float> planar(n * 2);
  for (auto& v : planar) {
    v = static_cast<float>(rng.uniform(-40.0, 40.0));
    if (quantized) v = std::round(v * 64.0f) / 64.0f;  // KITTI-representable
  }
  Tensor<float> mask;
  if (with_mask) {
    std::vector<float> m(n);
    for (auto& v : m) v = rng.uniform() < 0.8 ? 1.0f : 0.0f;
    mask = Tensor<float>::from_data({1, 1, H, W}, std::move(m));
  }
  return FlowField<float>(Tensor<float>::from_data({1, 2, H, W}, std::move(planar)),
                          std::move(mask));
}

bool bits_equal(const FlowField<float>& a, const FlowField<float>& b) {
  if (a.flow.shape() != b.flow.shape()) return false;
  return std::memcmp(a.flow.data().data(), b.flow.data().data(),
                     sizeof(float) * std::size_t(a.flow.numel())) == 0;
}

}  // namespace

TEST_SUITE("flow_io") {

TEST_CASE(".flo: 1x1 zero field is a 20-byte file that round-trips") {
  const std::string dir = testutil::temp_dir("flo_tiny");
  const std::string path = dir + "/tiny.flo";
  FlowField<float> f(Tensor<float>::from_data({1, 2, 1, 1}, {0.0f, 0.0f}));
  write_flo(path, f);
  CHECK(fs::file_size(path) == 20);  // 12-byte header + 2 floats
  FlowField<float> back = read_flo<float>(path);
  CHECK(back.width() == 1);
  CHECK(back.height() == 1);
  CHECK(bits_equal(f, back));
}

TEST_CASE(".flo: ramp field round-trips bitwise") {
  const std::string dir = testutil::temp_dir("flo_ramp");
  const std::string path = dir + "/ramp.flo";
  const int H = 3, W = 4;
  std::vector<float> planar(std::size_t(2) * H * W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      planar[std::size_t(y) * W + x] = float(x) + 0.25f;
      planar[std::size_t(H) * W + y * W + x] = float(y) - 0.5f;
    }
  FlowField<float> f(Tensor<float>::from_data({1, 2, H, W}, std::move(planar)));
  write_flo(path, f);
  CHECK(bits_equal(f, read_flo<float>(path)));
}

TEST_CASE(".flo: 50 random fields round-trip bitwise") {
  const std::string dir = testutil::temp_dir("flo_many");
  Rng rng(77);
  for (int i = 0; i < 50; ++i) {
    const int H = 1 + rng.uniform_int(1, 8), W = 1 + rng.uniform_int(1, 8);
    FlowField<float> f = make_field(H, W, rng);
    const std::string path = dir + "/f" + std::to_string(i) + ".flo";
    write_flo(path, f);
    CHECK(bits_equal(f, read_flo<float>(path)));
  }
}

TEST_CASE(".flo: corrupted magic tag is a format error") {
  const std::string dir = testutil::temp_dir("flo_badmagic");
  const std::string path = dir + "/bad.flo";
  std::string bytes = testutil::read_file(path);  // empty
  const float bad_tag = 123.0f;
  const std::int32_t w = 1, h = 1;
  bytes.assign(reinterpret_cast<const char*>(&bad_tag), 4);
  bytes.append(reinterpret_cast<const char*>(&w), 4);
  bytes.append(reinterpret_cast<const char*>(&h), 4);
  bytes.append(8, '\0');
  testutil::write_file(path, bytes);
  CHECK_THROWS_AS(read_flo<float>(path), FormatError);
}

TEST_CASE(".flo: truncated payload is a length error") {
  const std::string dir = testutil::temp_dir("flo_trunc");
  const std::string path = dir + "/trunc.flo";
  const float tag = kFloMagic;
  const std::int32_t w = 2, h = 2;
  std::string bytes(reinterpret_cast<const char*>(&tag), 4);
  bytes.append(reinterpret_cast<const char*>(&w), 4);
  bytes.append(reinterpret_cast<const char*>(&h), 4);
  bytes.append(10, '\0');  // needs 32 payload bytes
  testutil::write_file(path, bytes);
  CHECK_THROWS_AS(read_flo<float>(path), LengthError);
}

TEST_CASE(".flo: trailing bytes are a length error") {
  const std::string dir = testutil::temp_dir("flo_long");
  const std::string path = dir + "/long.flo";
  FlowField<float> f(Tensor<float>::from_data({1, 2, 1, 1}, {1.0f, 2.0f}));
  write_flo(path, f);
  std::string bytes = testutil::read_file(path);
  bytes.append(4, 'x');
  testutil::write_file(path, bytes);
  CHECK_THROWS_AS(read_flo<float>(path), LengthError);
}

TEST_CASE("kitti png: offset identity and the 1/64 quantum") {
  const std::string dir = testutil::temp_dir("kitti_vals");
  // Craft the raster directly: 2^15 encodes 0, 2^15 + 64 encodes 1.0.
  Raster16 img;
  img.width = 2;
  img.height = 1;
  img.channels = 3;
  img.pixels = {32768, 32768, 1, 32768 + 64, 32768, 1};
  const std::string path = dir + "/enc.png";
  write_png16(path, img);
  FlowField<float> f = read_kitti_png<float>(path);
  CHECK(f.flow.at({0, 0, 0, 0}) == 0.0f);
  CHECK(f.flow.at({0, 0, 0, 1}) == 1.0f);
  CHECK(f.flow.at({0, 1, 0, 0}) == 0.0f);
  CHECK(f.valid.at({0, 0, 0, 0}) == 1.0f);
}

TEST_CASE("kitti png: zero validity excludes the pixel via the mask") {
  const std::string dir = testutil::temp_dir("kitti_valid");
  Raster16 img;
  img.width = 2;
  img.height = 1;
  img.channels = 3;
  img.pixels = {32768 + 640, 32768, 1, 0, 0, 0};
  const std::string path = dir + "/mask.png";
  write_png16(path, img);
  FlowField<float> f = read_kitti_png<float>(path);
  CHECK(f.valid.at({0, 0, 0, 0}) == 1.0f);
  CHECK(f.valid.at({0, 0, 0, 1}) == 0.0f);
}

TEST_CASE("kitti png: 50 random representable fields round-trip exactly") {
  const std::string dir = testutil::temp_dir("kitti_many");
  Rng rng(99);
  for (int i = 0; i < 50; ++i) {
    const int H = 1 + rng.uniform_int(1, 6), W = 1 + rng.uniform_int(1, 6);
    FlowField<float> f = make_field(H, W, rng, /*quantized=*/true,
                                    /*with_mask=*/i % 2 == 1);
    const std::string path = dir + "/k" + std::to_string(i) + ".png";
    write_kitti_png(path, f);
    FlowField<float> back = read_kitti_png<float>(path);
    REQUIRE(back.flow.shape() == f.flow.shape());
    const std::size_t n = std::size_t(H) * W;
    for (std::size_t p = 0; p < n; ++p) {
      const bool valid = !f.valid.defined() || f.valid.data()[p] != 0.0f;
      CHECK(back.valid.data()[p] == (valid ? 1.0f : 0.0f));
      if (!valid) continue;  // invalid pixels are written as zero samples
      CHECK(back.flow.data()[p] == f.flow.data()[p]);
      CHECK(back.flow.data()[n + p] == f.flow.data()[n + p]);
    }
  }
}

TEST_CASE("kitti png: wrong bit depth is a format error") {
  const std::string dir = testutil::temp_dir("kitti_depth");
  Raster8 img;
  img.width = 2;
  img.height = 2;
  img.channels = 3;
  img.pixels.assign(12, 128);
  const std::string path = dir + "/depth8.png";
  write_png8(path, img);
  CHECK_THROWS_AS(read_kitti_png<float>(path), FormatError);
}

TEST_CASE("kitti png: wrong channel count is a format error") {
  const std::string dir = testutil::temp_dir("kitti_chans");
  Raster16 img;
  img.width = 2;
  img.height = 2;
  img.channels = 1;
  img.pixels.assign(4, 40000);
  const std::string path = dir + "/gray16.png";
  write_png16(path, img);
  CHECK_THROWS_AS(read_kitti_png<float>(path), FormatError);
}

TEST_CASE("non-PNG bytes are rejected as a format error, not a crash") {
  const std::string dir = testutil::temp_dir("png_garbage");
  const std::string path = dir + "/junk.png";
  testutil::write_file(path, "definitely not a png");
  CHECK_THROWS_AS(read_png8(path), FormatError);
  CHECK_THROWS_AS(read_png16(path), FormatError);
}

TEST_CASE("flow_to_color: zero field renders all white") {
  FlowField<float> f(Tensor<float>::zeros({1, 2, 3, 3}));
  Raster8 img = flow_to_color(f);
  for (auto p : img.pixels) CHECK(p == 255);
}

TEST_CASE("flow_to_color: antipodal flows render complementary colors") {
  Rng rng(5);
  for (int trial = 0; trial < 8; ++trial) {
    const double ang = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    const float u = float(3.0 * std::cos(ang)), v = float(3.0 * std::sin(ang));
    FlowField<float> f(
        Tensor<float>::from_data({1, 2, 1, 2}, {u, -u, v, -v}));
    Raster8 img = flow_to_color(f, 3.0);  // both pixels at full saturation
    for (int c = 0; c < 3; ++c) {
      const int sum = int(img.at(0, 0, c)) + int(img.at(0, 1, c));
      CHECK(std::abs(sum - 255) <= 2);  // complementary up to rounding
    }
  }
}

TEST_CASE("flow_to_color: doubling flow doubles saturation up to clipping") {
  // Hue fixed; distance from white scales with magnitude.
  FlowField<float> one(Tensor<float>::from_data({1, 2, 1, 1}, {2.0f, 0.0f}));
  FlowField<float> two(Tensor<float>::from_data({1, 2, 1, 1}, {4.0f, 0.0f}));
  FlowField<float> four(Tensor<float>::from_data({1, 2, 1, 1}, {8.0f, 0.0f}));
  Raster8 a = flow_to_color(one, 4.0);
  Raster8 b = flow_to_color(two, 4.0);
  Raster8 c = flow_to_color(four, 4.0);  // clips at saturation 1
  for (int ch = 0; ch < 3; ++ch) {
    const int da = 255 - a.at(0, 0, ch);
    const int db = 255 - b.at(0, 0, ch);
    const int dc = 255 - c.at(0, 0, ch);
    CHECK(std::abs(db - 2 * da) <= 2);
    CHECK(dc == db);  // clipped at max saturation
  }
}

TEST_CASE("flow_to_color: invalid pixels render black") {
  FlowField<float> f(
      Tensor<float>::from_data({1, 2, 1, 2}, {5.0f, 5.0f, 0.0f, 0.0f}),
      Tensor<float>::from_data({1, 1, 1, 2}, {1.0f, 0.0f}));
  Raster8 img = flow_to_color(f);
  CHECK(img.at(0, 1, 0) == 0);
  CHECK(img.at(0, 1, 1) == 0);
  CHECK(img.at(0, 1, 2) == 0);
}

}  // TEST_SUITE
