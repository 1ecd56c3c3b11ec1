#include "dnadepth/losses.hpp"

#include <limits>
#include <stdexcept>

namespace dnadepth {

namespace F = torch::nn::functional;

namespace {

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

torch::Tensor box_filter(const torch::Tensor& x, int64_t window) {
  if (window == 1) return x;
  const int64_t pad = window / 2;
  auto padded = F::pad(x, F::PadFuncOptions({pad, pad, pad, pad}).mode(torch::kReflect));
  return F::avg_pool2d(padded, F::AvgPool2dFuncOptions(window).stride(1));
}

}  // namespace

void LossConfig::validate() const {
  require(alpha >= 0.0 && alpha <= 1.0, "LossConfig: alpha must lie in [0,1]");
  require(lambda_re >= 0.0 && beta_smooth >= 0.0, "LossConfig: weights must be non-negative");
  require(ssim_window >= 1 && ssim_window % 2 == 1, "LossConfig: ssim_window must be odd");
  require(ssim_c1 > 0.0 && ssim_c2 > 0.0, "LossConfig: SSIM constants must be positive");
}

torch::Tensor ssim(const torch::Tensor& a, const torch::Tensor& b, const LossConfig& cfg) {
  require(a.dim() == 4, "ssim: expected (B,C,H,W)");
  require(a.sizes() == b.sizes(), "ssim: shape mismatch");
  const int64_t w = cfg.ssim_window;
  require(a.size(2) > w / 2 && a.size(3) > w / 2, "ssim: image smaller than the window");

  auto mu_a = box_filter(a, w);
  auto mu_b = box_filter(b, w);
  auto var_a = box_filter(a * a, w) - mu_a * mu_a;
  auto var_b = box_filter(b * b, w) - mu_b * mu_b;
  auto cov = box_filter(a * b, w) - mu_a * mu_b;

  auto num = (2 * mu_a * mu_b + cfg.ssim_c1) * (2 * cov + cfg.ssim_c2);
  auto den = (mu_a * mu_a + mu_b * mu_b + cfg.ssim_c1) * (var_a + var_b + cfg.ssim_c2);
  return (num / den).clamp(-1.0, 1.0);
}

torch::Tensor photometric_error(const torch::Tensor& target, const torch::Tensor& synthesized,
                                const LossConfig& cfg) {
  require(target.sizes() == synthesized.sizes(), "photometric_error: shape mismatch");
  auto l1 = (target - synthesized).abs().mean(1, true);
  if (cfg.alpha == 0.0) return l1;
  auto dssim = (1 - ssim(target, synthesized, cfg)).mean(1, true);
  return cfg.alpha / 2 * dssim + (1 - cfg.alpha) * l1;
}

MinReprojection min_reprojection(const std::vector<torch::Tensor>& errors,
                                 const std::vector<torch::Tensor>& validity) {
  require(!errors.empty(), "min_reprojection: no error maps");
  require(validity.empty() || validity.size() == errors.size(),
          "min_reprojection: one mask per error map required");
  for (const auto& e : errors) {
    require(e.sizes() == errors.front().sizes(), "min_reprojection: shape mismatch");
  }

  auto stacked = torch::stack(errors, 0);
  auto masks = validity.empty()
                   ? torch::ones_like(stacked, torch::kBool)
                   : torch::stack(validity, 0).expand_as(stacked).to(torch::kBool);
  auto inf = torch::full_like(stacked, std::numeric_limits<double>::infinity());
  auto [best, index] = torch::where(masks, stacked, inf).min(0);
  auto any = masks.any(0);
  return MinReprojection{torch::where(any, best, torch::zeros_like(best)),
                         torch::where(any, index, torch::full_like(index, -1)), any};
}

torch::Tensor masked_mean(const torch::Tensor& values, const torch::Tensor& mask) {
  auto m = mask.expand_as(values).to(values.dtype());
  return (values * m).sum() / m.sum().clamp_min(1.0);
}

torch::Tensor edge_aware_smoothness(const torch::Tensor& disp, const torch::Tensor& image) {
  require(disp.dim() == 4 && disp.size(1) == 1, "edge_aware_smoothness: disp must be (B,1,H,W)");
  require(image.dim() == 4 && image.size(0) == disp.size(0) && image.size(2) == disp.size(2) &&
              image.size(3) == disp.size(3),
          "edge_aware_smoothness: image and disparity sizes differ");
  auto mean = disp.mean({2, 3}, true);
  require(!(mean == 0).any().item<bool>(), "edge_aware_smoothness: zero-mean disparity");
  auto d = disp / mean;

  const int64_t h = d.size(2), w = d.size(3);
  auto total = torch::zeros({}, disp.options());
  if (w > 1) {
    auto dx = (d.slice(3, 0, w - 1) - d.slice(3, 1, w)).abs();
    auto ix = (image.slice(3, 0, w - 1) - image.slice(3, 1, w)).abs().mean(1, true);
    total = total + (dx * torch::exp(-ix)).mean();
  }
  if (h > 1) {
    auto dy = (d.slice(2, 0, h - 1) - d.slice(2, 1, h)).abs();
    auto iy = (image.slice(2, 0, h - 1) - image.slice(2, 1, h)).abs().mean(1, true);
    total = total + (dy * torch::exp(-iy)).mean();
  }
  return total;
}

torch::Tensor total_loss(const torch::Tensor& photometric, const torch::Tensor& smoothness,
                         const LossConfig& cfg) {
  return cfg.lambda_re * photometric + cfg.beta_smooth * smoothness;
}

double total_loss(double photometric, double smoothness, const LossConfig& cfg) {
  return cfg.lambda_re * photometric + cfg.beta_smooth * smoothness;
}

}  // namespace dnadepth
