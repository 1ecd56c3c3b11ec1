#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <torch/torch.h>

#include "dnadepth/data.hpp"
#include "dnadepth/layers.hpp"
#include "dnadepth/network.hpp"
#include "dnadepth/training.hpp"
#include "json.hpp"

namespace dnadepth {

struct DepthMetrics {
  double abs_rel = 0.0;
  double sq_rel = 0.0;
  double rmse = 0.0;
  double rmse_log = 0.0;
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta3 = 0.0;

  std::array<double, 7> values() const {
    return {abs_rel, sq_rel, rmse, rmse_log, delta1, delta2, delta3};
  }
  static const std::array<const char*, 7>& names();
};

enum class EvalCrop { kEigen, kNone };

struct EvalProtocol {
  bool median_scaling = true;
  double min_depth = 1e-3;
  double cap = 80.0;
  EvalCrop crop = EvalCrop::kEigen;
};

std::string to_string(EvalCrop crop);
EvalCrop eval_crop_from_string(const std::string& name);
nlohmann::json to_json(const EvalProtocol& p);

// The Garg crop as [row0, row1) x [col0, col1) for an h x w ground-truth map.
cv::Rect eigen_crop(int height, int width);

// pred and gt are single-channel float maps of the same size. Pixels count
// when gt lies strictly inside (min_depth, cap) and inside the crop. Throws
// std::invalid_argument when no pixel is valid.
DepthMetrics compute_metrics(const cv::Mat& pred, const cv::Mat& gt,
                             const EvalProtocol& protocol = {});

// Uniform mean over frames.
DepthMetrics mean_metrics(const std::vector<DepthMetrics>& frames);

struct ComplexityReport {
  int64_t total_params = 0;
  int64_t macs = 0;
  std::vector<int64_t> input_shape;
  std::map<std::string, int64_t> params_breakdown;
  std::map<std::string, int64_t> macs_breakdown;

  double gmacs() const { return static_cast<double>(macs) * 1e-9; }
};

// Counts parameter scalars, broken down by top-level child module.
ComplexityReport count_parameters(const torch::nn::Module& module, bool trainable_only = true);

// Runs one forward pass of a zero image under a MacCounter. input_shape is
// (B,C,H,W). The breakdown keys are the MacScope paths.
template <typename Net>
ComplexityReport estimate_flops(Net& net, const std::vector<int64_t>& input_shape) {
  torch::NoGradGuard no_grad;
  const bool was_training = net->is_training();
  net->eval();
  ComplexityReport report;
  report.input_shape = input_shape;
  {
    MacCounter counter;
    net->forward(torch::zeros(input_shape));
    report.macs_breakdown = counter.by_scope();
    report.macs = counter.total();
  }
  net->train(was_training);
  return report;
}

// Parameters plus MACs of a freshly built DepthNet.
ComplexityReport depthnet_complexity(const DepthNetConfig& cfg, int64_t height, int64_t width);

nlohmann::json to_json(const ComplexityReport& r, bool double_macs = false);

// A DepthNet restored from a training checkpoint, ready for inference.
struct LoadedDepthNet {
  DepthNet net{nullptr};
  ModelConfig model;
  TrainConfig train;
};
LoadedDepthNet load_depth_net(const std::filesystem::path& checkpoint);

// image is (3,H,W) in [0,1]. Resizes to height x width for the network and
// returns the finest-scale depth at that size as a (height,width) tensor.
torch::Tensor predict_depth(LoadedDepthNet& model, const torch::Tensor& image, int64_t height,
                            int64_t width);

struct FrameResult {
  std::string frame_id;
  DepthMetrics metrics;
};

struct EvalReport {
  EvalProtocol protocol;
  DepthMetrics mean;
  std::vector<FrameResult> frames;
  std::vector<std::pair<std::string, std::string>> skipped;  // frame id, reason

  double skipped_fraction() const;
};

// Produces a prediction for a frame at the GT resolution, or nullopt to skip.
using Predictor =
    std::function<std::optional<cv::Mat>(const FrameId& id, const cv::Size& gt_size)>;

// Loads GT for each frame from the dataset layout and scores the predictor.
// Frames with missing GT or a failing predictor are skipped with a warning.
EvalReport evaluate_frames(const std::vector<FrameId>& ids, const std::filesystem::path& data_root,
                           const Predictor& predict, const EvalProtocol& protocol);

struct CheckpointEvalOptions {
  std::filesystem::path data_root;
  int64_t height = 192;
  int64_t width = 640;
  std::string image_ext = ".png";
};

EvalReport evaluate_checkpoint(const std::filesystem::path& checkpoint,
                               const std::vector<FrameId>& ids,
                               const CheckpointEvalOptions& options, const EvalProtocol& protocol);

// Precomputed predictions at <dir>/<seq>/image_0X/<index>.{png,f32}.
EvalReport evaluate_predictions(const std::filesystem::path& predictions,
                                const std::vector<FrameId>& ids,
                                const std::filesystem::path& data_root,
                                const EvalProtocol& protocol);
std::filesystem::path prediction_stem(const std::filesystem::path& dir, const FrameId& id);

// per_frame.csv and summary.json.
void write_eval_report(const EvalReport& report, const std::filesystem::path& out_dir,
                       const std::optional<ComplexityReport>& complexity = std::nullopt,
                       bool double_macs = false);

// One row in the metric column order, three decimals.
std::string format_metrics_row(const DepthMetrics& m);

}  // namespace dnadepth
