#pragma once

#include <map>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "dnadepth/encoder.hpp"
#include "dnadepth/layers.hpp"

namespace dnadepth {

// Decoder lattice. Node (level, stage) holds F_level^stage; stage 0 is the
// extracted encoder feature. Levels are 1-based, level 1 being the finest.
struct FusionNode {
  int64_t level;
  int64_t stage;
  auto operator<=>(const FusionNode&) const = default;
};

enum class EdgeKind { kUp, kSame, kDown };

struct FusionEdge {
  FusionNode from;
  FusionNode to;
  EdgeKind kind;
};

// Triangular schedule: stage j holds levels 1..(L - j), so one more of the
// coarsest levels is dropped at every stage. Each node reads only the
// previous stage at levels i+1 (up), i (same) and i-1 (down, for i > 1).
class FusionGrid {
 public:
  explicit FusionGrid(int64_t levels);

  int64_t levels() const { return levels_; }
  int64_t stages() const { return levels_ - 1; }
  bool contains(FusionNode n) const;
  const std::vector<FusionNode>& nodes() const { return nodes_; }
  const std::vector<FusionEdge>& edges() const { return edges_; }
  std::vector<FusionEdge> inputs_of(FusionNode n) const;

  // Final node of each level 1..levels-1, i.e. the last stage that still
  // carries the level. Index k of the result feeds output scale k.
  std::vector<FusionNode> outputs() const;

  // Largest |from.level - to.level| over all edges.
  int64_t max_level_span() const;

  // Stage-0 levels a node depends on, through any path.
  std::vector<int64_t> reachable_levels(FusionNode n) const;

 private:
  int64_t levels_;
  std::vector<FusionNode> nodes_;
  std::vector<FusionEdge> edges_;
};

struct DecoderConfig {
  std::vector<int64_t> widths;  // unified width C(i) per level; empty = default
  int64_t num_output_scales = 4;
  int64_t fuse_kernel = 3;
};

// Per-level widths used when DecoderConfig::widths is empty.
std::vector<int64_t> default_decoder_widths(EncoderKind kind);

// Channel-attention bottleneck ratio for a given width.
int64_t attention_reduction(int64_t channels);

// ε(·): 1x1 convolution to the unified width, batch norm, ELU.
class ExtractBlockImpl : public torch::nn::Module {
 public:
  ExtractBlockImpl(int64_t in, int64_t out);
  torch::Tensor forward(const torch::Tensor& x);

  ConvLayer conv{nullptr};
  BatchNormLayer bn{nullptr};
};
TORCH_MODULE(ExtractBlock);

// U(·): nearest x2 upsample, then a 3x3 separable conv. Width is preserved.
class UpsampleBlockImpl : public torch::nn::Module {
 public:
  explicit UpsampleBlockImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);

  SeparableConv conv{nullptr};
};
TORCH_MODULE(UpsampleBlock);

// D(·): stride-2 3x3 separable conv. Width is preserved.
class DownsampleBlockImpl : public torch::nn::Module {
 public:
  explicit DownsampleBlockImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);

  SeparableConv conv{nullptr};
};
TORCH_MODULE(DownsampleBlock);

// One F_i^j node: C([U(up), S(same)]) at level 1, C([U(up), S(same), D(down)])
// above it.
class FusionBlockImpl : public torch::nn::Module {
 public:
  FusionBlockImpl(int64_t level, int64_t up_width, int64_t same_width,
                  std::optional<int64_t> down_width, int64_t out_width, int64_t fuse_kernel = 3);
  torch::Tensor forward(const torch::Tensor& up_in, const torch::Tensor& same_in,
                        const std::optional<torch::Tensor>& down_in = std::nullopt);

  int64_t level() const { return level_; }
  int64_t concat_width() const { return concat_width_; }

  UpsampleBlock up{nullptr};
  SeparableConv same{nullptr};
  DownsampleBlock down{nullptr};
  ConvLayer fuse{nullptr};

 private:
  int64_t level_;
  int64_t concat_width_;
};
TORCH_MODULE(FusionBlock);

// Squeeze-excite gating: global average pool, 1x1 bottleneck, ReLU, 1x1
// expansion, sigmoid; the input is scaled per channel by the gate.
class ChannelAttentionImpl : public torch::nn::Module {
 public:
  ChannelAttentionImpl(int64_t channels, int64_t reduction);
  torch::Tensor forward(const torch::Tensor& x);
  torch::Tensor gate(const torch::Tensor& x);

  ConvLayer squeeze{nullptr};
  ConvLayer excite{nullptr};
};
TORCH_MODULE(ChannelAttention);

// Output head: x2 upsample to the next finer resolution, channel attention,
// separable conv to one channel, sigmoid.
class DisparityHeadImpl : public torch::nn::Module {
 public:
  explicit DisparityHeadImpl(int64_t channels, bool upsample = true);
  torch::Tensor forward(const torch::Tensor& x);

  ChannelAttention attention{nullptr};
  SeparableConv conv{nullptr};

 private:
  bool upsample_;
};
TORCH_MODULE(DisparityHead);

class DepthDecoderImpl : public torch::nn::Module {
 public:
  DepthDecoderImpl(const std::vector<int64_t>& encoder_channels, const DecoderConfig& cfg,
                   EncoderKind kind);

  // Disparities ordered finest first; scale k is at 1/2^k of the input size.
  std::vector<torch::Tensor> forward(const std::vector<torch::Tensor>& pyramid);

  const FusionGrid& grid() const { return grid_; }
  const std::vector<int64_t>& widths() const { return widths_; }
  FusionBlock& node(FusionNode n) { return nodes_.at(n); }

  std::vector<ExtractBlock> extract;
  std::vector<DisparityHead> heads;

 private:
  FusionGrid grid_;
  std::vector<int64_t> widths_;
  int64_t num_outputs_;
  std::map<FusionNode, FusionBlock> nodes_;
};
TORCH_MODULE(DepthDecoder);

struct DepthNetConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
};

class DepthNetImpl : public torch::nn::Module {
 public:
  explicit DepthNetImpl(const DepthNetConfig& cfg);

  // image (B,3,H,W) in [0,1]; H and W must be divisible by 2^levels.
  std::vector<torch::Tensor> forward(const torch::Tensor& image);

  const DepthNetConfig& config() const { return cfg_; }
  int64_t stride() const;

  std::shared_ptr<Encoder> encoder;
  DepthDecoder decoder{nullptr};

 private:
  DepthNetConfig cfg_;
};
TORCH_MODULE(DepthNet);

struct PoseNetConfig {
  std::vector<int64_t> widths{16, 32, 64, 128, 256};
  double translation_scale = 0.01;
  double rotation_scale = 1.0;
};

// Relative pose regressor for a pair of frames. The output is the 6-vector
// [rx, ry, rz, tx, ty, tz] with the configured scales already applied, ready
// for pose_from_6dof.
class PoseNetImpl : public torch::nn::Module {
 public:
  explicit PoseNetImpl(const PoseNetConfig& cfg = {});
  torch::Tensor forward(const torch::Tensor& frame_a, const torch::Tensor& frame_b);

  const PoseNetConfig& config() const { return cfg_; }

 private:
  PoseNetConfig cfg_;
  std::vector<ConvLayer> convs_;
  ConvLayer head_{nullptr};
};
TORCH_MODULE(PoseNet);

}  // namespace dnadepth
