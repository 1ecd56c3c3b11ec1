#pragma once

#include <vector>

#include <torch/torch.h>

namespace dnadepth {

struct LossConfig {
  double alpha = 0.85;         // SSIM share of the photometric error
  double lambda_re = 1.0;      // reprojection weight
  double beta_smooth = 1e-3;   // smoothness weight
  int64_t ssim_window = 3;
  double ssim_c1 = 0.01 * 0.01;
  double ssim_c2 = 0.03 * 0.03;
  // Also offer the unwarped source frames as candidates in the per-pixel
  // minimum and drop pixels where one of them wins (stationary pixels).
  bool automask = false;

  void validate() const;
};

// Per-channel SSIM map of two (B,C,H,W) images, computed with a box window and
// reflection padding. Values lie in [-1, 1].
torch::Tensor ssim(const torch::Tensor& a, const torch::Tensor& b, const LossConfig& cfg);

// (alpha/2)(1 - SSIM) + (1 - alpha)|a - b|, averaged over channels -> (B,1,H,W).
torch::Tensor photometric_error(const torch::Tensor& target, const torch::Tensor& synthesized,
                                const LossConfig& cfg);

struct MinReprojection {
  torch::Tensor error;      // (B,1,H,W); 0 where no candidate is valid
  torch::Tensor selection;  // (B,1,H,W) int64 index of the winning candidate, -1 if none
  torch::Tensor valid;      // (B,1,H,W) bool, true where any candidate is valid
};

// Per-pixel minimum over candidate error maps, each restricted to its own
// validity mask. Masks may be empty, meaning every pixel is valid.
MinReprojection min_reprojection(const std::vector<torch::Tensor>& errors,
                                 const std::vector<torch::Tensor>& validity = {});

// Mean of `values` over the pixels where `mask` holds; 0 for an empty mask.
torch::Tensor masked_mean(const torch::Tensor& values, const torch::Tensor& mask);

// Edge-aware smoothness of a (B,1,H,W) disparity against a (B,C,H,W) image.
// The disparity is divided by its per-image mean first, so the term does not
// depend on the disparity scale.
torch::Tensor edge_aware_smoothness(const torch::Tensor& disp, const torch::Tensor& image);

torch::Tensor total_loss(const torch::Tensor& photometric, const torch::Tensor& smoothness,
                         const LossConfig& cfg);
double total_loss(double photometric, double smoothness, const LossConfig& cfg);

}  // namespace dnadepth
