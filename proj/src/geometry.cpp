#include "dnadepth/geometry.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace dnadepth {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

int64_t exact_scale(int64_t size, Ratio f, const char* what) {
  const int64_t scaled = size * f.num;
  require(scaled % f.den == 0, std::string("scale_intrinsics: ") + what + " " +
                                   std::to_string(size) + " * " + std::to_string(f.num) +
                                   "/" + std::to_string(f.den) + " is not integral");
  return scaled / f.den;
}

torch::Tensor skew(const torch::Tensor& v) {
  auto zero = torch::zeros_like(v.select(1, 0));
  auto x = v.select(1, 0), y = v.select(1, 1), z = v.select(1, 2);
  return torch::stack({zero, -z, y, z, zero, -x, -y, x, zero}, 1).view({-1, 3, 3});
}

}  // namespace

void Intrinsics::validate() const {
  require(std::isfinite(fx) && std::isfinite(fy) && std::isfinite(cx) && std::isfinite(cy),
          "Intrinsics: non-finite entry");
  require(fx > 0 && fy > 0, "Intrinsics: focal lengths must be positive");
  require(width >= 1 && height >= 1, "Intrinsics: image size must be at least 1x1");
}

torch::Tensor Intrinsics::matrix(const torch::TensorOptions& options) const {
  return torch::tensor({fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0}, options).view({3, 3});
}

Intrinsics scale_intrinsics(const Intrinsics& K, Ratio factor) {
  require(factor.num > 0 && factor.den > 0, "scale_intrinsics: factor must be positive");
  Intrinsics out = K;
  out.width = exact_scale(K.width, factor, "width");
  out.height = exact_scale(K.height, factor, "height");
  const double s = factor.value();
  out.fx *= s;
  out.fy *= s;
  out.cx *= s;
  out.cy *= s;
  return out;
}

Intrinsics resize_intrinsics(const Intrinsics& K, int64_t new_width, int64_t new_height) {
  require(new_width >= 1 && new_height >= 1, "resize_intrinsics: bad target size");
  const double sx = static_cast<double>(new_width) / static_cast<double>(K.width);
  const double sy = static_cast<double>(new_height) / static_cast<double>(K.height);
  return Intrinsics{K.fx * sx, K.fy * sy, K.cx * sx, K.cy * sy, new_width, new_height};
}

Intrinsics flip_intrinsics(const Intrinsics& K) {
  Intrinsics out = K;
  out.cx = static_cast<double>(K.width - 1) - K.cx;
  return out;
}

Pose Pose::identity(int64_t batch, const torch::TensorOptions& options) {
  return Pose{torch::eye(3, options).unsqueeze(0).repeat({batch, 1, 1}),
              torch::zeros({batch, 3}, options)};
}

torch::Tensor Pose::matrix() const {
  auto top = torch::cat({rotation, translation.unsqueeze(2)}, 2);
  auto bottom = torch::zeros({batch(), 1, 4}, rotation.options());
  bottom.select(2, 3).fill_(1.0);
  return torch::cat({top, bottom}, 1);
}

torch::Tensor Pose::apply(const torch::Tensor& points) const {
  return torch::matmul(points, rotation.transpose(1, 2)) + translation.unsqueeze(1);
}

Pose compose(const Pose& a, const Pose& b) {
  return Pose{torch::matmul(a.rotation, b.rotation),
              torch::matmul(a.rotation, b.translation.unsqueeze(2)).squeeze(2) + a.translation};
}

Pose inverse(const Pose& p) {
  auto rt = p.rotation.transpose(1, 2);
  return Pose{rt, -torch::matmul(rt, p.translation.unsqueeze(2)).squeeze(2)};
}

torch::Tensor rodrigues(const torch::Tensor& axis_angle) {
  require(axis_angle.dim() == 2 && axis_angle.size(1) == 3, "rodrigues: expected (B,3)");
  auto theta2 = axis_angle.pow(2).sum(1);
  // Below this the Taylor expansion is exact to machine precision; switching on
  // theta^2 keeps the gradient finite at zero rotation.
  constexpr double kSmall = 1e-8;
  auto small = theta2 < kSmall;
  auto safe2 = torch::where(small, torch::ones_like(theta2), theta2);
  auto theta = safe2.sqrt();
  auto a = torch::where(small, 1.0 - theta2 / 6.0, theta.sin() / theta);
  auto b = torch::where(small, 0.5 - theta2 / 24.0, (1.0 - theta.cos()) / safe2);
  auto k = skew(axis_angle);
  auto eye = torch::eye(3, axis_angle.options()).unsqueeze(0);
  return eye + a.view({-1, 1, 1}) * k + b.view({-1, 1, 1}) * torch::matmul(k, k);
}

Pose pose_from_6dof(const torch::Tensor& vec) {
  auto v = vec.dim() == 1 ? vec.unsqueeze(0) : vec;
  require(v.dim() == 2 && v.size(1) == 6, "pose_from_6dof: expected (6) or (B,6)");
  require(torch::isfinite(v).all().item<bool>(), "pose_from_6dof: non-finite input");
  return Pose{rodrigues(v.slice(1, 0, 3)), v.slice(1, 3, 6)};
}

PixelGrid PixelGrid::make(int64_t height, int64_t width, const torch::TensorOptions& options) {
  require(height >= 1 && width >= 1, "PixelGrid: size must be at least 1x1");
  auto v = torch::arange(height, options).view({height, 1}).expand({height, width});
  auto u = torch::arange(width, options).view({1, width}).expand({height, width});
  return PixelGrid{height, width, torch::stack({u, v, torch::ones_like(u)}, 2).contiguous()};
}

torch::Tensor PixelGrid::uv() const { return homogeneous.slice(2, 0, 2); }

torch::Tensor backproject(const torch::Tensor& depth, const Intrinsics& K,
                          const PixelGrid& grid) {
  require(depth.dim() == 4 && depth.size(1) == 1, "backproject: depth must be (B,1,H,W)");
  require(depth.size(2) == grid.height && depth.size(3) == grid.width,
          "backproject: depth and pixel grid sizes differ");
  auto g = grid.homogeneous.to(depth.dtype());
  auto x = (g.select(2, 0) - K.cx) / K.fx;
  auto y = (g.select(2, 1) - K.cy) / K.fy;
  auto rays = torch::stack({x, y, torch::ones_like(x)}, 2);  // (H,W,3)
  return depth.squeeze(1).unsqueeze(3) * rays.unsqueeze(0);
}

Projection project(const torch::Tensor& points, const Pose& T, const Intrinsics& K,
                   double z_eps) {
  require(points.dim() == 4 && points.size(3) == 3, "project: points must be (B,H,W,3)");
  const auto b = points.size(0), h = points.size(1), w = points.size(2);
  require(T.batch() == b || T.batch() == 1, "project: pose batch does not match points");
  auto moved = T.apply(points.reshape({b, h * w, 3}).to(T.rotation.dtype()))
                   .to(points.dtype())
                   .view({b, h, w, 3});
  auto z = moved.select(3, 2);
  auto in_front = z > z_eps;
  auto z_safe = z.clamp_min(z_eps);
  auto u = K.fx * moved.select(3, 0) / z_safe + K.cx;
  auto v = K.fy * moved.select(3, 1) / z_safe + K.cy;
  const double tol = kBorderTolerance;
  auto inside = (u >= -tol) & (u <= static_cast<double>(K.width - 1) + tol) & (v >= -tol) &
                (v <= static_cast<double>(K.height - 1) + tol);
  return Projection{torch::stack({u, v}, 3), (in_front & inside).unsqueeze(1)};
}

WarpResult warp(const torch::Tensor& source, const torch::Tensor& coords,
                const std::optional<torch::Tensor>& valid) {
  require(source.dim() == 4, "warp: source must be (B,C,H,W)");
  require(coords.dim() == 4 && coords.size(3) == 2, "warp: coords must be (B,H,W,2)");
  require(coords.size(0) == source.size(0), "warp: batch mismatch");
  const auto b = source.size(0), c = source.size(1), hs = source.size(2), ws = source.size(3);
  const auto h = coords.size(1), w = coords.size(2);
  if (valid) {
    require(valid->sizes() == torch::IntArrayRef({b, 1, h, w}), "warp: mask shape mismatch");
  }

  auto x = coords.select(3, 0);
  auto y = coords.select(3, 1);
  auto finite = torch::isfinite(x) & torch::isfinite(y);
  const double tol = kBorderTolerance;
  auto inside = finite & (x >= -tol) & (x <= static_cast<double>(ws - 1) + tol) & (y >= -tol) &
                (y <= static_cast<double>(hs - 1) + tol);
  auto zero = torch::zeros_like(x);
  auto xc = torch::where(finite, x, zero).clamp(0, static_cast<double>(ws - 1));
  auto yc = torch::where(finite, y, zero).clamp(0, static_cast<double>(hs - 1));

  auto x0 = xc.detach().floor();
  auto y0 = yc.detach().floor();
  auto wx = xc - x0;
  auto wy = yc - y0;
  auto ix0 = x0.to(torch::kLong);
  auto iy0 = y0.to(torch::kLong);
  auto ix1 = (ix0 + 1).clamp_max(ws - 1);
  auto iy1 = (iy0 + 1).clamp_max(hs - 1);

  auto flat = source.reshape({b, c, hs * ws});
  auto sample = [&](const torch::Tensor& iy, const torch::Tensor& ix) {
    auto idx = (iy * ws + ix).view({b, 1, h * w}).expand({b, c, h * w});
    return flat.gather(2, idx).view({b, c, h, w});
  };
  auto wx4 = wx.unsqueeze(1).to(source.dtype());
  auto wy4 = wy.unsqueeze(1).to(source.dtype());
  auto out = (1 - wx4) * (1 - wy4) * sample(iy0, ix0) + wx4 * (1 - wy4) * sample(iy0, ix1) +
             (1 - wx4) * wy4 * sample(iy1, ix0) + wx4 * wy4 * sample(iy1, ix1);

  auto mask = inside.unsqueeze(1);
  if (valid) mask = mask & *valid;
  return WarpResult{out, mask};
}

}  // namespace dnadepth
