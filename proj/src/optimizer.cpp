#include "dnadepth/optimizer.hpp"

#include <cmath>

namespace dnadepth {

Adam::Adam(std::vector<torch::Tensor> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    exp_avg_.push_back(torch::zeros_like(p, torch::MemoryFormat::Contiguous));
    exp_avg_sq_.push_back(torch::zeros_like(p, torch::MemoryFormat::Contiguous));
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) {
    if (p.grad().defined()) p.mutable_grad().zero_();
  }
}

void Adam::step(double lr) {
  torch::NoGradGuard no_grad;
  ++steps_;
  const double bias1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
  const double bias2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
  for (size_t k = 0; k < params_.size(); ++k) {
    const auto& g = params_[k].grad();
    if (!g.defined()) continue;
    exp_avg_[k].mul_(options_.beta1).add_(g, 1.0 - options_.beta1);
    exp_avg_sq_[k].mul_(options_.beta2).addcmul_(g, g, 1.0 - options_.beta2);
    auto denom = (exp_avg_sq_[k] / bias2).sqrt_().add_(options_.eps);
    params_[k].addcdiv_(exp_avg_[k], denom, -lr / bias1);
  }
}

void Adam::save(Archive& archive, const std::string& prefix) const {
  for (size_t k = 0; k < params_.size(); ++k) {
    archive.arrays[prefix + "/m/" + std::to_string(k)] = exp_avg_[k];
    archive.arrays[prefix + "/v/" + std::to_string(k)] = exp_avg_sq_[k];
  }
  archive.arrays[prefix + "/steps"] = torch::tensor({steps_}, torch::kInt64);
}

void Adam::load(const Archive& archive, const std::string& prefix) {
  auto fetch = [&](const std::string& key) -> const torch::Tensor& {
    auto it = archive.arrays.find(key);
    if (it == archive.arrays.end()) throw IoError("checkpoint is missing '" + key + "'");
    return it->second;
  };
  torch::NoGradGuard no_grad;
  for (size_t k = 0; k < params_.size(); ++k) {
    exp_avg_[k].copy_(fetch(prefix + "/m/" + std::to_string(k)));
    exp_avg_sq_[k].copy_(fetch(prefix + "/v/" + std::to_string(k)));
  }
  steps_ = fetch(prefix + "/steps").item<int64_t>();
}

}  // namespace dnadepth
