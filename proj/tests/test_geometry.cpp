#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "dnadepth/geometry.hpp"
#include "oracles.hpp"

using namespace dnadepth;

namespace {

const auto kF64 = torch::TensorOptions().dtype(torch::kFloat64);

double max_abs(const torch::Tensor& t) { return t.abs().max().item<double>(); }

Intrinsics identity_K(int64_t w, int64_t h) { return Intrinsics{1, 1, 0, 0, w, h}; }

}  // namespace

TEST_SUITE("geometry") {

TEST_CASE("intrinsics validation and matrix") {
  Intrinsics K{100, 120, 50, 40, 640, 192};
  CHECK_NOTHROW(K.validate());
  auto m = K.matrix();
  CHECK(m[0][0].item<double>() == 100);
  CHECK(m[1][1].item<double>() == 120);
  CHECK(m[0][2].item<double>() == 50);
  CHECK(m[1][2].item<double>() == 40);
  CHECK(m[2][2].item<double>() == 1);
  CHECK_THROWS_AS((Intrinsics{0, 1, 0, 0, 4, 4}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((Intrinsics{1, 1, 0, 0, 0, 4}.validate()), std::invalid_argument);
}

TEST_CASE("scale_intrinsics") {
  Intrinsics K{100, 100, 50, 50, 640, 192};
  CHECK(scale_intrinsics(K, {1, 1}) == K);
  auto half = scale_intrinsics(K, {1, 2});
  CHECK(half.fx == 50);
  CHECK(half.cx == 25);
  CHECK(half.width == 320);
  CHECK(half.height == 96);
  CHECK_THROWS_AS(scale_intrinsics(K, {1, 3}), std::invalid_argument);
  CHECK_THROWS_AS(scale_intrinsics(K, {0, 1}), std::invalid_argument);
}

TEST_CASE("flip_intrinsics mirrors the principal point") {
  Intrinsics K{100, 100, 10, 20, 64, 32};
  auto f = flip_intrinsics(K);
  CHECK(f.cx == doctest::Approx(53.0));
  CHECK(flip_intrinsics(f) == K);
}

TEST_CASE("pose_from_6dof basics") {
  auto zero = pose_from_6dof(torch::zeros({6}, kF64));
  CHECK(max_abs(zero.rotation - torch::eye(3, kF64)) == 0.0);
  CHECK(max_abs(zero.translation) == 0.0);

  auto tr = pose_from_6dof(torch::tensor({0.0, 0.0, 0.0, 1.0, 2.0, 3.0}, kF64));
  CHECK(max_abs(tr.rotation - torch::eye(3, kF64)) == 0.0);
  CHECK(max_abs(tr.translation - torch::tensor({{1.0, 2.0, 3.0}}, kF64)) == 0.0);

  auto quarter = pose_from_6dof(torch::tensor({std::numbers::pi / 2, 0.0, 0.0, 0.0, 0.0, 0.0}, kF64));
  auto mapped = quarter.apply(torch::tensor({{{0.0, 1.0, 0.0}}}, kF64));
  CHECK(max_abs(mapped - torch::tensor({{{0.0, 0.0, 1.0}}}, kF64)) < 1e-12);

  CHECK_THROWS_AS(pose_from_6dof(torch::tensor({std::nan(""), 0.0, 0.0, 0.0, 0.0, 0.0}, kF64)),
                  std::invalid_argument);
  CHECK_THROWS_AS(pose_from_6dof(torch::zeros({5}, kF64)), std::invalid_argument);
}

TEST_CASE("rodrigues agrees with the matrix exponential") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int trial = 0; trial < 20; ++trial) {
    oracle::Vec3 w{u(rng), u(rng), u(rng)};
    if (trial == 0) w = {1e-6, -2e-6, 5e-7};
    auto r = rodrigues(torch::tensor({w[0], w[1], w[2]}, kF64).view({1, 3}));
    const auto expected = oracle::expm_rotation(w);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) CHECK(r[0][i][j].item<double>() == doctest::Approx(expected[i][j]).epsilon(1e-10));
  }
}

TEST_CASE("rotations are orthonormal and compose with their inverse") {
  torch::manual_seed(3);
  auto vec = torch::randn({8, 6}, kF64);
  auto p = pose_from_6dof(vec);
  auto rtr = torch::matmul(p.rotation.transpose(1, 2), p.rotation);
  CHECK(max_abs(rtr - torch::eye(3, kF64)) < 1e-6);
  CHECK(max_abs(torch::linalg_det(p.rotation) - 1.0) < 1e-6);
  auto id = compose(p, inverse(p));
  CHECK(max_abs(id.matrix() - torch::eye(4, kF64)) < 1e-6);
}

TEST_CASE("rodrigues gradient is finite at zero") {
  auto w = torch::zeros({1, 3}, kF64).requires_grad_(true);
  rodrigues(w).sum().backward();
  CHECK(torch::isfinite(w.grad()).all().item<bool>());
}

TEST_CASE("pixel grid is dense, row-major and reproducible") {
  auto g = PixelGrid::make(3, 4, kF64);
  CHECK(g.homogeneous.sizes() == torch::IntArrayRef({3, 4, 3}));
  CHECK(g.homogeneous[2][1][0].item<double>() == 1.0);  // u
  CHECK(g.homogeneous[2][1][1].item<double>() == 2.0);  // v
  CHECK(g.homogeneous[2][1][2].item<double>() == 1.0);
  CHECK(torch::equal(g.homogeneous, PixelGrid::make(3, 4, kF64).homogeneous));
}

TEST_CASE("backproject examples") {
  auto grid = PixelGrid::make(5, 5, kF64);
  auto depth = torch::full({1, 1, 5, 5}, 2.0, kF64);
  auto pts = backproject(depth, identity_K(5, 5), grid);
  CHECK(max_abs(pts[0][0][0] - torch::tensor({0.0, 0.0, 2.0}, kF64)) == 0.0);
  CHECK(max_abs(pts[0][4][3] - torch::tensor({6.0, 8.0, 2.0}, kF64)) == 0.0);

  auto big = PixelGrid::make(101, 101, kF64);
  auto d = torch::full({1, 1, 101, 101}, 7.5, kF64);
  auto p = backproject(d, Intrinsics{100, 100, 50, 50, 101, 101}, big);
  CHECK(max_abs(p[0][50][50] - torch::tensor({0.0, 0.0, 7.5}, kF64)) == 0.0);

  CHECK_THROWS_AS(backproject(torch::ones({1, 1, 4, 4}, kF64), identity_K(5, 5), grid),
                  std::invalid_argument);
}

TEST_CASE("backproject matches a per-pixel linear solve") {
  Intrinsics K{83.0, 91.0, 17.3, 11.8, 32, 24};
  oracle::Mat3 km = {{{K.fx, 0, K.cx}, {0, K.fy, K.cy}, {0, 0, 1}}};
  torch::manual_seed(1);
  auto depth = torch::rand({1, 1, 24, 32}, kF64) * 20 + 0.5;
  auto pts = backproject(depth, K, PixelGrid::make(24, 32, kF64));
  double worst = 0;
  for (int v = 0; v < 24; v += 3) {
    for (int u = 0; u < 32; u += 5) {
      const double d = depth[0][0][v][u].item<double>();
      auto ray = oracle::solve3(km, {static_cast<double>(u), static_cast<double>(v), 1.0});
      for (int k = 0; k < 3; ++k) {
        worst = std::max(worst, std::abs(pts[0][v][u][k].item<double>() - d * ray[k]));
      }
      CHECK(pts[0][v][u][2].item<double>() == d);
    }
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("project examples") {
  auto points = torch::tensor({0.0, 0.0, 2.0}, kF64).view({1, 1, 1, 3});
  Pose t = Pose::identity(1, kF64);
  t.translation = torch::tensor({{1.0, 0.0, 0.0}}, kF64);
  auto proj = project(points, t, Intrinsics{1, 1, 0, 0, 4, 4});
  CHECK(proj.coords[0][0][0][0].item<double>() == doctest::Approx(0.5));
  CHECK(proj.coords[0][0][0][1].item<double>() == doctest::Approx(0.0));
  CHECK(proj.valid.all().item<bool>());

  auto behind = torch::tensor({0.0, 0.0, 0.0}, kF64).view({1, 1, 1, 3});
  CHECK_FALSE(project(behind, Pose::identity(1, kF64), identity_K(4, 4)).valid.any().item<bool>());
  auto outside = torch::tensor({10.0, 0.0, 1.0}, kF64).view({1, 1, 1, 3});
  CHECK_FALSE(project(outside, Pose::identity(1, kF64), identity_K(4, 4)).valid.any().item<bool>());
}

TEST_CASE("project agrees with hand pinhole arithmetic for a general pose") {
  Intrinsics K{120, 110, 30.5, 20.5, 64, 48};
  auto vec = torch::tensor({0.05, -0.03, 0.02, 0.3, -0.1, 0.2}, kF64);
  auto T = pose_from_6dof(vec);
  torch::manual_seed(5);
  auto depth = torch::rand({1, 1, 48, 64}, kF64) * 5 + 5;
  auto proj = project(backproject(depth, K, PixelGrid::make(48, 64, kF64)), T, K);
  const auto R = oracle::expm_rotation({0.05, -0.03, 0.02});
  for (int v = 1; v < 48; v += 7) {
    for (int u = 2; u < 64; u += 9) {
      const double d = depth[0][0][v][u].item<double>();
      oracle::Vec3 p{(u - K.cx) / K.fx * d, (v - K.cy) / K.fy * d, d};
      auto q = oracle::mul(R, p);
      q[0] += 0.3;
      q[1] += -0.1;
      q[2] += 0.2;
      CHECK(proj.coords[0][v][u][0].item<double>() == doctest::Approx(K.fx * q[0] / q[2] + K.cx).epsilon(1e-9));
      CHECK(proj.coords[0][v][u][1].item<double>() == doctest::Approx(K.fy * q[1] / q[2] + K.cy).epsilon(1e-9));
    }
  }
}

TEST_CASE("identity round trip reproduces the grid") {
  Intrinsics K{58.3, 61.7, 31.2, 30.9, 64, 64};
  torch::manual_seed(11);
  for (auto dtype : {torch::kFloat32, torch::kFloat64}) {
    auto opts = torch::TensorOptions().dtype(dtype);
    auto depth = torch::rand({2, 1, 64, 64}, opts) * 50 + 0.2;
    auto grid = PixelGrid::make(64, 64, opts);
    auto proj = project(backproject(depth, K, grid), Pose::identity(2, opts), K);
    const double tol = dtype == torch::kFloat64 ? 1e-9 : 1e-4;
    CHECK(max_abs(proj.coords - grid.uv().unsqueeze(0)) < tol);
    CHECK(proj.valid.all().item<bool>());
  }
}

TEST_CASE("warp examples") {
  auto src = torch::arange(0, 30, kF64).view({1, 1, 5, 6});
  auto grid = PixelGrid::make(5, 6, kF64).uv().unsqueeze(0);
  auto same = warp(src, grid);
  CHECK(torch::equal(same.image, src));
  CHECK(same.valid.all().item<bool>());

  // Ramp I(u,v) = u sampled one pixel to the right.
  auto ramp = torch::arange(0, 8, kF64).view({1, 1, 1, 8}).expand({1, 1, 6, 8}).contiguous();
  auto shifted = PixelGrid::make(6, 8, kF64).uv().clone().unsqueeze(0);
  shifted.select(3, 0).add_(1.0);
  auto out = warp(ramp, shifted);
  auto interior = out.image.slice(3, 0, 7);
  CHECK(max_abs(interior - (ramp.slice(3, 0, 7) + 1)) < 1e-12);
  CHECK_FALSE(out.valid.select(3, 7).any().item<bool>());

  auto far = torch::full({1, 6, 8, 2}, -100.0, kF64);
  auto none = warp(ramp, far);
  CHECK_FALSE(none.valid.any().item<bool>());
  CHECK(torch::isfinite(none.image).all().item<bool>());

  auto nan_coords = torch::full({1, 6, 8, 2}, NAN, kF64);
  auto nan_out = warp(ramp, nan_coords);
  CHECK(torch::isfinite(nan_out.image).all().item<bool>());
  CHECK_FALSE(nan_out.valid.any().item<bool>());

  CHECK_THROWS_AS(warp(ramp, torch::zeros({1, 6, 8, 3}, kF64)), std::invalid_argument);
  CHECK_THROWS_AS(warp(ramp, shifted, torch::ones({1, 1, 3, 3}, torch::kBool)),
                  std::invalid_argument);
}

TEST_CASE("warp matches a scalar bilinear oracle") {
  torch::manual_seed(2);
  auto src = torch::rand({1, 1, 9, 11}, kF64);
  auto coords = torch::rand({1, 7, 5, 2}, kF64) * 12 - 1;
  auto out = warp(src, coords);
  const auto im = oracle::from_tensor(src[0][0]);
  for (int r = 0; r < 7; ++r) {
    for (int c = 0; c < 5; ++c) {
      const double x = coords[0][r][c][0].item<double>(), y = coords[0][r][c][1].item<double>();
      CHECK(out.image[0][0][r][c].item<double>() == doctest::Approx(oracle::bilinear(im, x, y)).epsilon(1e-12));
      const bool inside = x >= 0 && x <= 10 && y >= 0 && y <= 8;
      CHECK(out.valid[0][0][r][c].item<bool>() == inside);
    }
  }
}

TEST_CASE("warp and project gradients match finite differences") {
  torch::manual_seed(4);
  auto src = torch::rand({1, 2, 12, 12}, kF64);
  // Fractional parts kept away from 0 and 1 so no sample crosses a kink.
  auto base = torch::randint(1, 10, {1, 4, 5, 2}, kF64) + 0.2 + torch::rand({1, 4, 5, 2}, kF64) * 0.6;
  auto coords = base.clone().requires_grad_(true);
  auto weights = torch::rand({1, 2, 4, 5}, kF64);
  auto f = [&](const torch::Tensor& c) { return (warp(src, c).image * weights).sum(); };
  f(coords).backward();
  const double h = 1e-3;
  for (int k = 0; k < 20; ++k) {
    const int64_t r = k % 4, c = k % 5, a = k % 2;
    auto plus = base.clone(), minus = base.clone();
    plus[0][r][c][a] += h;
    minus[0][r][c][a] -= h;
    const double fd = (f(plus) - f(minus)).item<double>() / (2 * h);
    const double an = coords.grad()[0][r][c][a].item<double>();
    CHECK(std::abs(an - fd) <= 1e-2 * std::max(1.0, std::abs(fd)));
  }

  Intrinsics K{20, 20, 5.5, 5.5, 12, 12};
  auto T = pose_from_6dof(torch::tensor({0.01, 0.02, -0.01, 0.1, 0.0, 0.05}, kF64));
  auto d0 = torch::rand({1, 1, 12, 12}, kF64) + 2;
  auto depth = d0.clone().requires_grad_(true);
  auto grid = PixelGrid::make(12, 12, kF64);
  auto g = [&](const torch::Tensor& d) { return project(backproject(d, K, grid), T, K).coords.sum(); };
  g(depth).backward();
  for (int k = 0; k < 20; ++k) {
    const int64_t r = 1 + (k * 7) % 10, c = 1 + (k * 3) % 10;
    auto plus = d0.clone(), minus = d0.clone();
    plus[0][0][r][c] += h;
    minus[0][0][r][c] -= h;
    const double fd = (g(plus) - g(minus)).item<double>() / (2 * h);
    const double an = depth.grad()[0][0][r][c].item<double>();
    CHECK(std::abs(an - fd) <= 1e-2 * std::max(1e-3, std::abs(fd)));
  }
}

TEST_CASE("warping by T then by its inverse returns to the grid") {
  Intrinsics K{40, 40, 23.5, 15.5, 48, 32};
  auto opts = kF64;
  auto grid = PixelGrid::make(32, 48, opts);
  auto v = grid.uv().select(2, 1);
  auto depth = (6.0 + 0.5 * torch::sin(v / 7.0)).view({1, 1, 32, 48});
  auto T = pose_from_6dof(torch::tensor({0.0, 0.01, 0.0, 0.05, 0.0, 0.0}, opts));
  auto pts = backproject(depth, K, grid);
  auto moved = T.apply(pts.view({1, -1, 3})).view({1, 32, 48, 3});
  auto back = project(moved, inverse(T), K);
  CHECK(max_abs(back.coords - grid.uv().unsqueeze(0)) < 1e-9);
}

TEST_CASE("deterministic outputs") {
  torch::manual_seed(9);
  auto src = torch::rand({1, 3, 16, 16});
  auto coords = torch::rand({1, 16, 16, 2}) * 15;
  CHECK(torch::equal(warp(src, coords).image, warp(src, coords).image));
}

}  // TEST_SUITE
