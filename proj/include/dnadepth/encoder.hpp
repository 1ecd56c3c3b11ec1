#pragma once

#include <memory>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "dnadepth/layers.hpp"

namespace dnadepth {

enum class EncoderKind { kEfficientNetB0, kEfficientNetB1, kTiny };

std::string to_string(EncoderKind kind);
EncoderKind encoder_kind_from_string(const std::string& name);

struct EncoderConfig {
  EncoderKind kind = EncoderKind::kEfficientNetB0;
};

// Produces a feature pyramid: level i (1-based) sits at 1/2^i of the input
// resolution. The default encoders all emit five levels.
class Encoder : public torch::nn::Module {
 public:
  virtual std::vector<torch::Tensor> forward(const torch::Tensor& image) = 0;
  virtual const std::vector<int64_t>& channels() const = 0;
  int64_t num_levels() const { return static_cast<int64_t>(channels().size()); }
};

// One EfficientNet stage: `repeats` MBConv blocks, the first of which applies
// the stride and the channel change.
struct MBConvStage {
  int64_t expand_ratio;
  int64_t channels;
  int64_t repeats;
  int64_t stride;
  int64_t kernel;
};

// Stage layouts for B0 and B1 (B1 scales the depth by 1.1).
std::vector<MBConvStage> efficientnet_stages(EncoderKind kind);

class MBConvImpl : public torch::nn::Module {
 public:
  MBConvImpl(int64_t in, int64_t out, int64_t expand_ratio, int64_t kernel, int64_t stride);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  bool residual_;
  ConvLayer expand_{nullptr};
  BatchNormLayer expand_bn_{nullptr};
  ConvLayer depthwise_{nullptr};
  BatchNormLayer depthwise_bn_{nullptr};
  ConvLayer se_reduce_{nullptr};
  ConvLayer se_expand_{nullptr};
  ConvLayer project_{nullptr};
  BatchNormLayer project_bn_{nullptr};
};
TORCH_MODULE(MBConv);

// EfficientNet feature extractor with the B0/B1 stage layout, randomly
// initialised. The classification head is not built. Pyramid taps are the
// outputs of stages 1, 2, 3, 5 and 7.
class EfficientNetEncoder : public Encoder {
 public:
  explicit EfficientNetEncoder(EncoderKind kind);
  std::vector<torch::Tensor> forward(const torch::Tensor& image) override;
  const std::vector<int64_t>& channels() const override { return channels_; }

 private:
  ConvLayer stem_{nullptr};
  BatchNormLayer stem_bn_{nullptr};
  std::vector<torch::nn::Sequential> stages_;
  std::vector<size_t> taps_;
  std::vector<int64_t> channels_;
};

// Five stride-2 conv blocks; small enough to train on a CPU.
class TinyEncoder : public Encoder {
 public:
  TinyEncoder();
  std::vector<torch::Tensor> forward(const torch::Tensor& image) override;
  const std::vector<int64_t>& channels() const override { return channels_; }

 private:
  struct Block {
    ConvLayer down{nullptr};
    BatchNormLayer down_bn{nullptr};
    ConvLayer refine{nullptr};
    BatchNormLayer refine_bn{nullptr};
  };
  std::vector<Block> blocks_;
  std::vector<int64_t> channels_;
};

std::shared_ptr<Encoder> make_encoder(const EncoderConfig& cfg);

// Standard input normalisation applied before every encoder.
torch::Tensor normalize_input(const torch::Tensor& image);

}  // namespace dnadepth
