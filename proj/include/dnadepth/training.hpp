#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "dnadepth/data.hpp"
#include "dnadepth/geometry.hpp"
#include "dnadepth/losses.hpp"
#include "dnadepth/network.hpp"
#include "dnadepth/optimizer.hpp"

namespace dnadepth {

struct TrainConfig {
  int64_t epochs = 40;
  int64_t batch_size = 16;
  double lr_initial = 1e-4;
  int64_t lr_drop_epoch = 35;
  double lr_final = 1e-5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  int64_t num_scales = 4;
  double min_depth = 0.1;
  double max_depth = 100.0;
  uint64_t seed = 0;
  // Upsample every disparity to the input size before warping; otherwise the
  // loss runs at each disparity's native size against downsampled images.
  bool upsample_disparities = true;
  // Smoothness weight beta / 2^scale instead of a flat beta.
  bool smoothness_decay = true;
  int64_t max_steps = 0;  // 0 = no limit

  void validate() const;
  // Epochs are 0-based: epochs [0, lr_drop_epoch) use lr_initial.
  double learning_rate(int64_t epoch) const;
};

// depth = 1 / (1/max + (1/min - 1/max) * disp). Accepts disp in [0, 1]; the
// end points map to max_depth and min_depth.
torch::Tensor disp_to_depth(const torch::Tensor& disp, double min_depth, double max_depth);
torch::Tensor depth_to_disp(const torch::Tensor& depth, double min_depth, double max_depth);

struct LossBreakdown {
  torch::Tensor total;
  torch::Tensor photometric;  // mean over scales of the masked min-reprojection error
  torch::Tensor smoothness;   // mean over scales of the unweighted smoothness term
};

// The self-supervised objective for one batch. target and sources are
// (B,3,H,W); poses[k] maps frame t into sources[k]; disparities are the
// decoder outputs, finest first.
LossBreakdown view_synthesis_loss(const torch::Tensor& target,
                                  const std::vector<torch::Tensor>& sources,
                                  const std::vector<Pose>& poses,
                                  const std::vector<torch::Tensor>& disparities,
                                  const Intrinsics& K, const LossConfig& loss_cfg,
                                  const TrainConfig& train_cfg);

class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what, std::string snapshot = {})
      : std::runtime_error(what), snapshot_path(std::move(snapshot)) {}
  std::string snapshot_path;
};

struct StepResult {
  double total = 0.0;
  double photometric = 0.0;
  double smoothness = 0.0;
};

struct ModelConfig {
  DepthNetConfig depth;
  PoseNetConfig pose;
};

// Owns the DepthNet/PoseNet pair and the optimiser state.
class Trainer {
 public:
  Trainer(const ModelConfig& model, const TrainConfig& train, const LossConfig& loss);

  // One Adam update on a batch of triplets. Throws NumericalError when the
  // loss is not finite; no update is applied in that case.
  StepResult train_step(const std::vector<FrameTriplet>& batch, double lr);

  // Loss of a batch without updating anything.
  StepResult evaluate_loss(const std::vector<FrameTriplet>& batch);

  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path);

  DepthNet& depth_net() { return depth_; }
  PoseNet& pose_net() { return pose_; }
  const ModelConfig& model_config() const { return model_cfg_; }
  const TrainConfig& train_config() const { return train_cfg_; }
  const LossConfig& loss_config() const { return loss_cfg_; }

  int64_t step = 0;
  int64_t epoch = 0;        // epochs completed
  int64_t batch_index = 0;  // next batch within the current epoch

 private:
  LossBreakdown batch_loss(const std::vector<FrameTriplet>& batch);

  ModelConfig model_cfg_;
  TrainConfig train_cfg_;
  LossConfig loss_cfg_;
  DepthNet depth_{nullptr};
  PoseNet pose_{nullptr};
  std::unique_ptr<Adam> adam_;
};

struct StepRecord {
  int64_t step;
  int64_t epoch;
  double lr;
  double total;
  double photometric;
  double smoothness;
};

struct FitOptions {
  std::filesystem::path run_dir;  // empty: no files written
  std::optional<std::filesystem::path> resume_from;
  std::function<void(const StepRecord&)> on_step;
};

struct FitResult {
  std::vector<std::filesystem::path> checkpoints;
  std::vector<StepRecord> history;
};

// Runs the two-phase learning-rate schedule over the dataset. Writes
// metrics.csv and checkpoints/epoch_XXX.ckpt under run_dir when given.
FitResult fit(const TripletDataset& dataset, const ModelConfig& model, const TrainConfig& train,
              const LossConfig& loss, const FitOptions& options = {});

// Collated (B,3,H,W) batch tensors.
struct Batch {
  torch::Tensor prev, target, next;
  torch::Tensor input_prev, input_target, input_next;
};
Batch collate(const std::vector<FrameTriplet>& triplets);

}  // namespace dnadepth
