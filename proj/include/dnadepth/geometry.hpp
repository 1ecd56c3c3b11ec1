#pragma once

#include <cstdint>
#include <optional>

#include <torch/torch.h>

namespace dnadepth {

// Image tensors are laid out NCHW. Pixel centers sit at integer coordinates
// with the origin at the top-left; u grows rightward and v downward.

// Smallest camera-space depth a projected point may have and still count as
// visible.
inline constexpr double kProjectionMinDepth = 1e-4;

// Coordinates this far past the border still count as inside the image, so
// round-off on edge pixels does not mask them.
inline constexpr double kBorderTolerance = 1e-4;

struct Ratio {
  int64_t num = 1;
  int64_t den = 1;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
};

// Pinhole intrinsics shared by every frame of a dataset.
struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int64_t width = 1;
  int64_t height = 1;

  // Throws std::invalid_argument when the invariants do not hold.
  void validate() const;

  // 3x3 camera matrix.
  torch::Tensor matrix(const torch::TensorOptions& options = torch::kFloat64) const;

  bool operator==(const Intrinsics&) const = default;
};

// Scales focal lengths, principal point and image size by an exact rational
// factor. Fails if the scaled width or height would not be integral.
Intrinsics scale_intrinsics(const Intrinsics& K, Ratio factor);

// Anisotropic rescale to a new image size, as applied when an image is
// resized to the training resolution.
Intrinsics resize_intrinsics(const Intrinsics& K, int64_t new_width, int64_t new_height);

// Intrinsics of the horizontally mirrored image.
Intrinsics flip_intrinsics(const Intrinsics& K);

// Batched rigid transform mapping points from frame t into frame t'.
// rotation is (B,3,3), translation is (B,3).
struct Pose {
  torch::Tensor rotation;
  torch::Tensor translation;

  static Pose identity(int64_t batch = 1,
                       const torch::TensorOptions& options = torch::kFloat64);

  int64_t batch() const { return rotation.size(0); }

  // (B,4,4) homogeneous matrix.
  torch::Tensor matrix() const;

  // Applies the transform to a (B,N,3) point set.
  torch::Tensor apply(const torch::Tensor& points) const;
};

// a ∘ b: applies b first, then a.
Pose compose(const Pose& a, const Pose& b);
Pose inverse(const Pose& p);

// Axis-angle rotation matrix, smooth through the origin. axis_angle is (B,3).
torch::Tensor rodrigues(const torch::Tensor& axis_angle);

// Builds a pose from [rx, ry, rz, tx, ty, tz] laid out as (6) or (B,6).
// Differentiable in the input.
Pose pose_from_6dof(const torch::Tensor& vec);

// Homogeneous pixel coordinates (u, v, 1) for every pixel, shape (H,W,3).
struct PixelGrid {
  int64_t height = 0;
  int64_t width = 0;
  torch::Tensor homogeneous;

  static PixelGrid make(int64_t height, int64_t width,
                        const torch::TensorOptions& options = torch::kFloat32);

  // (H,W,2) view of the (u, v) components.
  torch::Tensor uv() const;
};

// depth (B,1,H,W) -> camera-space points (B,H,W,3) with z equal to depth.
torch::Tensor backproject(const torch::Tensor& depth, const Intrinsics& K,
                          const PixelGrid& grid);

struct Projection {
  torch::Tensor coords;  // (B,H,W,2) pixel coordinates (u, v)
  torch::Tensor valid;   // (B,1,H,W) bool
};

// Rigidly moves the points, projects them through K and divides by depth.
// Points that land behind z_eps or outside the image are masked invalid.
Projection project(const torch::Tensor& points, const Pose& T, const Intrinsics& K,
                   double z_eps = kProjectionMinDepth);

struct WarpResult {
  torch::Tensor image;  // (B,C,H,W)
  torch::Tensor valid;  // (B,1,H,W) bool
};

// Bilinear sampling of source (B,C,Hs,Ws) at coords (B,H,W,2). Samples are
// clamped to the edge; any coordinate outside the source image, and any pixel
// already invalid in `valid`, comes back masked. Differentiable with respect
// to both the image and the coordinates.
WarpResult warp(const torch::Tensor& source, const torch::Tensor& coords,
                const std::optional<torch::Tensor>& valid = std::nullopt);

}  // namespace dnadepth
