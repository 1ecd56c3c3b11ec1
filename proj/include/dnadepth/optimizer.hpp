#pragma once

#include <string>
#include <vector>

#include <torch/torch.h>

#include "dnadepth/checkpoint.hpp"

namespace dnadepth {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. The learning rate is passed per step so the
// schedule stays with the caller. Moments live in plain tensors so the whole
// state can go into a checkpoint archive.
class Adam {
 public:
  Adam(std::vector<torch::Tensor> params, AdamOptions options = {});

  void zero_grad();
  void step(double lr);

  int64_t steps() const { return steps_; }
  const AdamOptions& options() const { return options_; }

  void save(Archive& archive, const std::string& prefix) const;
  void load(const Archive& archive, const std::string& prefix);

 private:
  std::vector<torch::Tensor> params_;
  std::vector<torch::Tensor> exp_avg_;
  std::vector<torch::Tensor> exp_avg_sq_;
  AdamOptions options_;
  int64_t steps_ = 0;
};

}  // namespace dnadepth
