#include "dnadepth/network.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>
#include <string>

namespace dnadepth {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

std::string node_name(FusionNode n) {
  return "node_" + std::to_string(n.level) + "_" + std::to_string(n.stage);
}

}  // namespace

FusionGrid::FusionGrid(int64_t levels) : levels_(levels) {
  require(levels >= 2, "FusionGrid: need at least two levels");
  for (int64_t i = 1; i <= levels; ++i) nodes_.push_back({i, 0});
  for (int64_t j = 1; j < levels; ++j) {
    for (int64_t i = 1; i <= levels - j; ++i) {
      const FusionNode n{i, j};
      nodes_.push_back(n);
      edges_.push_back({{i + 1, j - 1}, n, EdgeKind::kUp});
      edges_.push_back({{i, j - 1}, n, EdgeKind::kSame});
      if (i > 1) edges_.push_back({{i - 1, j - 1}, n, EdgeKind::kDown});
    }
  }
}

bool FusionGrid::contains(FusionNode n) const {
  return std::find(nodes_.begin(), nodes_.end(), n) != nodes_.end();
}

std::vector<FusionEdge> FusionGrid::inputs_of(FusionNode n) const {
  std::vector<FusionEdge> out;
  for (const auto& e : edges_) {
    if (e.to == n) out.push_back(e);
  }
  return out;
}

std::vector<FusionNode> FusionGrid::outputs() const {
  std::vector<FusionNode> out;
  for (int64_t i = 1; i < levels_; ++i) out.push_back({i, levels_ - i});
  return out;
}

int64_t FusionGrid::max_level_span() const {
  int64_t span = 0;
  for (const auto& e : edges_) span = std::max(span, std::abs(e.from.level - e.to.level));
  return span;
}

std::vector<int64_t> FusionGrid::reachable_levels(FusionNode n) const {
  std::set<int64_t> levels;
  std::vector<FusionNode> stack{n};
  std::set<FusionNode> seen;
  while (!stack.empty()) {
    auto cur = stack.back();
    stack.pop_back();
    if (!seen.insert(cur).second) continue;
    if (cur.stage == 0) levels.insert(cur.level);
    for (const auto& e : inputs_of(cur)) stack.push_back(e.from);
  }
  return {levels.begin(), levels.end()};
}

std::vector<int64_t> default_decoder_widths(EncoderKind kind) {
  if (kind == EncoderKind::kTiny) return {24, 24, 24, 32, 32};
  return {48, 48, 48, 64, 64};
}

int64_t attention_reduction(int64_t channels) { return channels < 64 ? 4 : 16; }

ExtractBlockImpl::ExtractBlockImpl(int64_t in, int64_t out) {
  conv = register_module("conv", ConvLayer(ConvSpec{in, out, 1, 1, 1, false}));
  bn = register_module("bn", BatchNormLayer(out));
}

torch::Tensor ExtractBlockImpl::forward(const torch::Tensor& x) {
  return activate(bn->forward(conv->forward(x)), Activation::kElu);
}

UpsampleBlockImpl::UpsampleBlockImpl(int64_t channels) {
  conv = register_module("conv", SeparableConv(channels, channels));
}

torch::Tensor UpsampleBlockImpl::forward(const torch::Tensor& x) {
  return conv->forward(upsample2x(x));
}

DownsampleBlockImpl::DownsampleBlockImpl(int64_t channels) {
  conv = register_module("conv", SeparableConv(channels, channels, 2));
}

torch::Tensor DownsampleBlockImpl::forward(const torch::Tensor& x) { return conv->forward(x); }

FusionBlockImpl::FusionBlockImpl(int64_t level, int64_t up_width, int64_t same_width,
                                 std::optional<int64_t> down_width, int64_t out_width,
                                 int64_t fuse_kernel)
    : level_(level), concat_width_(up_width + same_width + down_width.value_or(0)) {
  require(level >= 1, "FusionBlock: levels are 1-based");
  require((level == 1) == !down_width.has_value(),
          "FusionBlock: a down input is required exactly when level > 1");
  up = register_module("up", UpsampleBlock(up_width));
  same = register_module("same", SeparableConv(same_width, same_width));
  if (down_width) down = register_module("down", DownsampleBlock(*down_width));
  fuse = register_module(
      "fuse", ConvLayer(ConvSpec{concat_width_, out_width, fuse_kernel, 1, 1, true, true}));
}

torch::Tensor FusionBlockImpl::forward(const torch::Tensor& up_in, const torch::Tensor& same_in,
                                       const std::optional<torch::Tensor>& down_in) {
  const auto h = same_in.size(2), w = same_in.size(3);
  require(up_in.size(2) * 2 == h && up_in.size(3) * 2 == w,
          "FusionBlock: up input must be at half the node resolution");
  std::vector<torch::Tensor> parts{up->forward(up_in), same->forward(same_in)};
  if (level_ > 1) {
    require(down_in.has_value(), "FusionBlock: level > 1 needs a down input");
    require(down_in->size(2) == h * 2 && down_in->size(3) == w * 2,
            "FusionBlock: down input must be at double the node resolution");
    parts.push_back(down->forward(*down_in));
  } else {
    require(!down_in.has_value(), "FusionBlock: level 1 takes no down input");
  }
  return activate(fuse->forward(torch::cat(parts, 1)), Activation::kElu);
}

ChannelAttentionImpl::ChannelAttentionImpl(int64_t channels, int64_t reduction) {
  const int64_t hidden = std::max<int64_t>(1, channels / reduction);
  squeeze = register_module("squeeze", ConvLayer(ConvSpec{channels, hidden, 1}));
  excite = register_module("excite", ConvLayer(ConvSpec{hidden, channels, 1}));
}

torch::Tensor ChannelAttentionImpl::gate(const torch::Tensor& x) {
  auto pooled = x.mean({2, 3}, true);
  MacCounter::record(x.numel());
  auto h = activate(squeeze->forward(pooled), Activation::kRelu);
  return activate(excite->forward(h), Activation::kSigmoid);
}

torch::Tensor ChannelAttentionImpl::forward(const torch::Tensor& x) {
  auto y = x * gate(x);
  MacCounter::record_elementwise(y);
  return y;
}

DisparityHeadImpl::DisparityHeadImpl(int64_t channels, bool upsample) : upsample_(upsample) {
  attention = register_module("attention",
                              ChannelAttention(channels, attention_reduction(channels)));
  conv = register_module("conv", SeparableConv(channels, 1, 1, Activation::kSigmoid));
}

torch::Tensor DisparityHeadImpl::forward(const torch::Tensor& x) {
  auto h = upsample_ ? upsample2x(x) : x;
  return conv->forward(attention->forward(h));
}

DepthDecoderImpl::DepthDecoderImpl(const std::vector<int64_t>& encoder_channels,
                                   const DecoderConfig& cfg, EncoderKind kind)
    : grid_(static_cast<int64_t>(encoder_channels.size())),
      widths_(cfg.widths.empty() ? default_decoder_widths(kind) : cfg.widths),
      num_outputs_(cfg.num_output_scales) {
  const auto levels = grid_.levels();
  require(static_cast<int64_t>(widths_.size()) == levels,
          "DepthDecoder: need one width per encoder level");
  for (auto w : widths_) require(w >= 1, "DepthDecoder: widths must be positive");
  require(num_outputs_ >= 1 && num_outputs_ <= levels - 1,
          "DepthDecoder: output scales must lie in [1, levels-1]");

  for (int64_t i = 1; i <= levels; ++i) {
    extract.push_back(register_module("extract_" + std::to_string(i),
                                      ExtractBlock(encoder_channels[i - 1], widths_[i - 1])));
  }
  for (const auto& n : grid_.nodes()) {
    if (n.stage == 0) continue;
    const auto i = n.level;
    std::optional<int64_t> down;
    if (i > 1) down = widths_[i - 2];
    auto block = FusionBlock(i, widths_[i], widths_[i - 1], down, widths_[i - 1], cfg.fuse_kernel);
    nodes_.emplace(n, register_module(node_name(n), block));
  }
  for (int64_t s = 0; s < num_outputs_; ++s) {
    heads.push_back(register_module("head_" + std::to_string(s), DisparityHead(widths_[s])));
  }
}

std::vector<torch::Tensor> DepthDecoderImpl::forward(const std::vector<torch::Tensor>& pyramid) {
  const auto levels = grid_.levels();
  require(static_cast<int64_t>(pyramid.size()) == levels,
          "DepthDecoder: pyramid depth does not match the decoder");

  std::map<FusionNode, torch::Tensor> f;
  {
    MacScope scope("extract");
    for (int64_t i = 1; i <= levels; ++i) f[{i, 0}] = extract[i - 1]->forward(pyramid[i - 1]);
  }
  {
    MacScope scope("fusion");
    for (int64_t j = 1; j < levels; ++j) {
      for (int64_t i = 1; i <= levels - j; ++i) {
        std::optional<torch::Tensor> down;
        if (i > 1) down = f.at({i - 1, j - 1});
        f[{i, j}] = nodes_.at({i, j})->forward(f.at({i + 1, j - 1}), f.at({i, j - 1}), down);
      }
    }
  }
  MacScope scope("heads");
  const auto outs = grid_.outputs();
  std::vector<torch::Tensor> disparities;
  for (int64_t s = 0; s < num_outputs_; ++s) disparities.push_back(heads[s]->forward(f.at(outs[s])));
  return disparities;
}

DepthNetImpl::DepthNetImpl(const DepthNetConfig& cfg) : cfg_(cfg) {
  encoder = register_module("encoder", make_encoder(cfg.encoder));
  decoder = register_module("decoder",
                            DepthDecoder(encoder->channels(), cfg.decoder, cfg.encoder.kind));
}

int64_t DepthNetImpl::stride() const { return int64_t{1} << encoder->num_levels(); }

std::vector<torch::Tensor> DepthNetImpl::forward(const torch::Tensor& image) {
  require(image.dim() == 4 && image.size(1) == 3, "DepthNet: expected a (B,3,H,W) image");
  require(image.size(2) % stride() == 0 && image.size(3) % stride() == 0,
          "DepthNet: input size " + std::to_string(image.size(3)) + "x" +
              std::to_string(image.size(2)) + " is not divisible by " + std::to_string(stride()));
  std::vector<torch::Tensor> pyramid;
  {
    MacScope scope("encoder");
    pyramid = encoder->forward(image);
  }
  MacScope scope("decoder");
  return decoder->forward(pyramid);
}

PoseNetImpl::PoseNetImpl(const PoseNetConfig& cfg) : cfg_(cfg) {
  require(!cfg.widths.empty(), "PoseNet: need at least one conv layer");
  int64_t in = 6;
  for (size_t k = 0; k < cfg.widths.size(); ++k) {
    convs_.push_back(register_module("conv" + std::to_string(k + 1),
                                     ConvLayer(ConvSpec{in, cfg.widths[k], 3, 2})));
    in = cfg.widths[k];
  }
  head_ = register_module("head", ConvLayer(ConvSpec{in, 6, 1}));
}

torch::Tensor PoseNetImpl::forward(const torch::Tensor& frame_a, const torch::Tensor& frame_b) {
  require(frame_a.dim() == 4 && frame_a.sizes() == frame_b.sizes(),
          "PoseNet: frames must share a (B,3,H,W) shape");
  MacScope scope("posenet");
  auto x = torch::cat({normalize_input(frame_a), normalize_input(frame_b)}, 1);
  for (auto& c : convs_) x = activate(c->forward(x), Activation::kRelu);
  auto out = head_->forward(x).mean({2, 3});
  auto scale = torch::tensor({cfg_.rotation_scale, cfg_.rotation_scale, cfg_.rotation_scale,
                              cfg_.translation_scale, cfg_.translation_scale,
                              cfg_.translation_scale},
                             out.options());
  return out * scale;
}

}  // namespace dnadepth
