#include <doctest.h>

#include <cmath>
#include <vector>

#include "sciflow/flow_ops.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace sciflow;

namespace {

FlowField<double> constant_flow(int B, int H, int W, double u, double v) {
  std::vector<double> f(std::size_t(B) * 2 * H * W);
  const std::size_t plane = std::size_t(H) * W;
  for (int b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < plane; ++i) {
      f[b * 2 * plane + i] = u;
      f[b * 2 * plane + plane + i] = v;
    }
  }
  return FlowField<double>(Tensor<double>::from_data({B, 2, H, W}, std::move(f)));
}

}  // namespace

TEST_SUITE("flow_ops") {

TEST_CASE("warp: zero flow is the identity") {
  Rng rng(2);
  Tensor<double> f = random_uniform<double>({2, 3, 5, 6}, rng, -2.0, 2.0);
  Tensor<double> out = warp(f, constant_flow(2, 5, 6, 0.0, 0.0));
  for (std::int64_t i = 0; i < f.numel(); ++i) CHECK(out.data()[i] == f.data()[i]);
}

TEST_CASE("warp: unit horizontal flow shifts a ramp by exactly one") {
  // I(x) = x; output(x) = I(x + 1) = x + 1 for interior columns.
  const int H = 4, W = 6;
  std::vector<double> ramp(std::size_t(H) * W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) ramp[std::size_t(y) * W + x] = double(x);
  Tensor<double> img = Tensor<double>::from_data({1, 1, H, W}, std::move(ramp));
  Tensor<double> out = warp(img, constant_flow(1, H, W, 1.0, 0.0));
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W - 1; ++x) {  // last column clamps
      CHECK(out.at({0, 0, y, x}) == doctest::Approx(x + 1.0).epsilon(1e-12));
    }
    CHECK(out.at({0, 0, y, W - 1}) == doctest::Approx(W - 1.0).epsilon(1e-12));
  }
}

TEST_CASE("warp matches the per-pixel interpolation oracle on random flow") {
  Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    const int B = 1 + trial % 2, C = 1 + trial % 3, H = 5, W = 6;
    Tensor<double> f = random_uniform<double>({B, C, H, W}, rng, -2.0, 2.0);
    Tensor<double> flow_t =
        random_uniform<double>({B, 2, H, W}, rng, -2.5, 2.5);
    Tensor<double> out = warp(f, FlowField<double>(flow_t));
    auto want = oracle::warp(oracle::to_vec(f), B, C, H, W, oracle::to_vec(flow_t));
    for (std::size_t i = 0; i < want.size(); ++i) {
      CHECK(out.data()[i] ==
            doctest::Approx(want[i]).epsilon(1e-6).scale(std::abs(want[i]) + 1.0));
    }
  }
}

TEST_CASE("warp: flow gradient matches finite differences") {
  Rng rng(29);
  Tensor<double> f = random_uniform<double>({1, 2, 5, 5}, rng, -1.0, 1.0, true);
  // Sub-pixel flow away from integer offsets keeps the warp smooth.
  std::vector<double> fl(std::size_t(2) * 25);
  for (auto& v : fl) {
    v = (rng.uniform() < 0.5 ? -1 : 1) * rng.uniform(0.15, 0.85);
  }
  Tensor<double> flow_t =
      Tensor<double>::from_data({1, 2, 5, 5}, std::move(fl), true);
  Tensor<double> proj = random_uniform<double>({1, 2, 5, 5}, rng, 0.3, 1.0);
  auto fn = [&] {
    return sum(mul(warp(f, FlowField<double>(flow_t)), proj));
  };
  oracle::expect_gradients_match(fn, {&f, &flow_t});
}

TEST_CASE("warp rejects mismatched spatial dims") {
  Tensor<double> f = Tensor<double>::zeros({1, 1, 4, 4});
  CHECK_THROWS_AS(warp(f, constant_flow(1, 5, 5, 0.0, 0.0)), ShapeError);
}

TEST_CASE("sci_map: equal features give exactly 1 everywhere") {
  Rng rng(37);
  Tensor<double> f = random_uniform<double>({1, 4, 4, 4}, rng, -100.0, 100.0);
  SciMap<double> m = sci_map(f, f);
  for (auto v : m.map.data()) CHECK(v == 1.0);
}

TEST_CASE("sci_map: unit differences over 4 channels give exp(-1)") {
  const int C = 4, H = 2, W = 2;
  Tensor<double> f1 = Tensor<double>::full({1, C, H, W}, 0.5);
  Tensor<double> f2 = Tensor<double>::full({1, C, H, W}, -0.5);  // diff 1 per channel
  SciMap<double> m = sci_map(f1, f2);
  // exponent = -(1 / (2*sqrt(4))) * 4 = -1
  for (auto v : m.map.data()) {
    CHECK(v == doctest::Approx(0.367879441171).epsilon(1e-9));
  }
}

TEST_CASE("sci_map: growing differences drive the value monotonically to 0") {
  double prev = 1.0;
  for (double scale : {0.1, 1.0, 10.0, 100.0, 1000.0, 1e6}) {
    Tensor<double> f1 = Tensor<double>::full({1, 3, 1, 1}, 0.0);
    Tensor<double> f2 = Tensor<double>::full({1, 3, 1, 1}, scale);
    const double v = sci_map(f1, f2).map.item();
    CHECK(v <= prev);
    prev = v;
  }
  CHECK(prev == doctest::Approx(0.0).epsilon(1e-30));
}

TEST_CASE("sci_map bounds hold for random pairs including huge magnitudes") {
  Rng rng(43);
  for (int trial = 0; trial < 300; ++trial) {
    const double mag = trial % 3 == 0 ? 1e6 : (trial % 3 == 1 ? 10.0 : 0.5);
    const int C = 1 + trial % 5;
    Tensor<double> f1 = random_uniform<double>({1, C, 3, 3}, rng, -mag, mag);
    Tensor<double> f2 = random_uniform<double>({1, C, 3, 3}, rng, -mag, mag);
    SciMap<double> m = sci_map(f1, f2);
    for (auto v : m.map.data()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("sci_map: monotonicity at a single pixel, others fixed") {
  Rng rng(47);
  Tensor<double> f1 = random_uniform<double>({1, 3, 2, 2}, rng, -1.0, 1.0);
  std::vector<double> base(f1.data().begin(), f1.data().end());
  double prev_value = 1.1;
  for (double bump : {0.0, 0.5, 1.0, 2.0, 4.0}) {
    std::vector<double> mod = base;
    mod[0] += bump;  // channel 0 of pixel (0,0)
    Tensor<double> f2 = Tensor<double>::from_data({1, 3, 2, 2}, std::move(mod));
    const double v = sci_map(f1, f2).map.at({0, 0, 0, 0});
    CHECK(v <= prev_value);
    prev_value = v;
  }
}

TEST_CASE("sci_map is differentiable through both feature maps") {
  Rng rng(53);
  Tensor<double> f1 = random_uniform<double>({1, 2, 3, 3}, rng, -1.0, 1.0, true);
  Tensor<double> f2 = random_uniform<double>({1, 2, 3, 3}, rng, -1.0, 1.0, true);
  oracle::expect_gradients_match([&] { return sum(sci_map(f1, f2).map); },
                                 {&f1, &f2});
}

TEST_CASE("local_correlation: zero-shift channel is ||f||^2 / sqrt(C)") {
  Rng rng(59);
  const int C = 3, H = 4, W = 4, r = 1;
  Tensor<double> f = random_uniform<double>({1, C, H, W}, rng, -2.0, 2.0);
  Tensor<double> corr = local_correlation(f, f, r);
  const int center = (2 * r + 1) * (2 * r + 1) / 2;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      double norm2 = 0.0;
      for (int c = 0; c < C; ++c) norm2 += f.at({0, c, y, x}) * f.at({0, c, y, x});
      CHECK(corr.at({0, center, y, x}) ==
            doctest::Approx(norm2 / std::sqrt(double(C))).epsilon(1e-9));
    }
  }
}

TEST_CASE("local_correlation: orthogonal features correlate to zero") {
  const int H = 3, W = 3;
  // f1 lives in channel 0, f2 in channel 1; inner products vanish.
  std::vector<double> a(std::size_t(2) * H * W, 0.0), b(std::size_t(2) * H * W, 0.0);
  for (int i = 0; i < H * W; ++i) {
    a[std::size_t(i)] = 1.0;
    b[std::size_t(H) * W + i] = 1.0;
  }
  Tensor<double> f1 = Tensor<double>::from_data({1, 2, H, W}, std::move(a));
  Tensor<double> f2 = Tensor<double>::from_data({1, 2, H, W}, std::move(b));
  Tensor<double> corr = local_correlation(f1, f2, 1);
  for (auto v : corr.data()) CHECK(v == 0.0);
}

TEST_CASE("local_correlation matches the triple-loop oracle") {
  Rng rng(61);
  for (int trial = 0; trial < 10; ++trial) {
    const int B = 1, C = 3, H = 5, W = 5, r = 1 + trial % 2;
    Tensor<double> f1 = random_uniform<double>({B, C, H, W}, rng, -1.5, 1.5);
    Tensor<double> f2 = random_uniform<double>({B, C, H, W}, rng, -1.5, 1.5);
    Tensor<double> corr = local_correlation(f1, f2, r);
    auto want = oracle::local_correlation(oracle::to_vec(f1), oracle::to_vec(f2),
                                          B, C, H, W, r);
    REQUIRE(corr.numel() == std::int64_t(want.size()));
    for (std::size_t i = 0; i < want.size(); ++i) {
      CHECK(corr.data()[i] ==
            doctest::Approx(want[i]).epsilon(1e-6).scale(std::abs(want[i]) + 1.0));
    }
  }
}

TEST_CASE("local_correlation: radius below one is an argument error") {
  Tensor<double> f = Tensor<double>::zeros({1, 1, 3, 3});
  CHECK_THROWS_AS(local_correlation(f, f, 0), ArgumentError);
}

TEST_CASE("local_correlation gradients match finite differences") {
  Rng rng(67);
  Tensor<double> f1 = random_uniform<double>({1, 2, 4, 4}, rng, -1.0, 1.0, true);
  Tensor<double> f2 = random_uniform<double>({1, 2, 4, 4}, rng, -1.0, 1.0, true);
  Tensor<double> proj = random_uniform<double>({1, 9, 4, 4}, rng, 0.3, 1.0);
  oracle::expect_gradients_match(
      [&] { return sum(mul(local_correlation(f1, f2, 1), proj)); }, {&f1, &f2});
}

TEST_CASE("FlowField validates its mask dimensions") {
  Tensor<double> flow = Tensor<double>::zeros({1, 2, 4, 4});
  Tensor<double> bad_mask = Tensor<double>::zeros({1, 1, 3, 4});
  CHECK_THROWS_AS(FlowField<double>(flow, bad_mask), ShapeError);
  Tensor<double> three_ch = Tensor<double>::zeros({1, 3, 4, 4});
  CHECK_THROWS_AS(FlowField<double>{three_ch}, ShapeError);
}

}  // TEST_SUITE
