#include "dnadepth/encoder.hpp"

#include <cmath>
#include <stdexcept>

namespace dnadepth {

std::string to_string(EncoderKind kind) {
  switch (kind) {
    case EncoderKind::kEfficientNetB0:
      return "efficientnet-b0-shape";
    case EncoderKind::kEfficientNetB1:
      return "efficientnet-b1-shape";
    case EncoderKind::kTiny:
      return "tiny";
  }
  return "unknown";
}

EncoderKind encoder_kind_from_string(const std::string& name) {
  if (name == "efficientnet-b0-shape" || name == "b0") return EncoderKind::kEfficientNetB0;
  if (name == "efficientnet-b1-shape" || name == "b1") return EncoderKind::kEfficientNetB1;
  if (name == "tiny") return EncoderKind::kTiny;
  throw std::invalid_argument("unknown encoder kind '" + name + "'");
}

std::vector<MBConvStage> efficientnet_stages(EncoderKind kind) {
  std::vector<MBConvStage> stages = {
      {1, 16, 1, 1, 3},  {6, 24, 2, 2, 3},  {6, 40, 2, 2, 5},  {6, 80, 3, 2, 3},
      {6, 112, 3, 1, 5}, {6, 192, 4, 2, 5}, {6, 320, 1, 1, 3},
  };
  if (kind == EncoderKind::kEfficientNetB1) {
    for (auto& s : stages) s.repeats = static_cast<int64_t>(std::ceil(1.1 * s.repeats));
  } else if (kind != EncoderKind::kEfficientNetB0) {
    throw std::invalid_argument("efficientnet_stages: not an EfficientNet kind");
  }
  return stages;
}

MBConvImpl::MBConvImpl(int64_t in, int64_t out, int64_t expand_ratio, int64_t kernel,
                       int64_t stride)
    : residual_(stride == 1 && in == out) {
  const int64_t hidden = in * expand_ratio;
  if (expand_ratio != 1) {
    expand_ = register_module("expand", ConvLayer(ConvSpec{in, hidden, 1, 1, 1, false}));
    expand_bn_ = register_module("expand_bn", BatchNormLayer(hidden));
  }
  depthwise_ = register_module(
      "depthwise", ConvLayer(ConvSpec{hidden, hidden, kernel, stride, hidden, false}));
  depthwise_bn_ = register_module("depthwise_bn", BatchNormLayer(hidden));
  const int64_t squeezed = std::max<int64_t>(1, in / 4);
  se_reduce_ = register_module("se_reduce", ConvLayer(ConvSpec{hidden, squeezed, 1}));
  se_expand_ = register_module("se_expand", ConvLayer(ConvSpec{squeezed, hidden, 1}));
  project_ = register_module("project", ConvLayer(ConvSpec{hidden, out, 1, 1, 1, false}));
  project_bn_ = register_module("project_bn", BatchNormLayer(out));
}

torch::Tensor MBConvImpl::forward(const torch::Tensor& x) {
  auto h = x;
  if (expand_) h = activate(expand_bn_->forward(expand_->forward(h)), Activation::kSilu);
  h = activate(depthwise_bn_->forward(depthwise_->forward(h)), Activation::kSilu);

  auto pooled = h.mean({2, 3}, true);
  auto gate = activate(se_reduce_->forward(pooled), Activation::kSilu);
  gate = activate(se_expand_->forward(gate), Activation::kSigmoid);
  h = h * gate;
  MacCounter::record_elementwise(h);

  h = project_bn_->forward(project_->forward(h));
  if (residual_) {
    h = h + x;
    MacCounter::record_elementwise(h);
  }
  return h;
}

EfficientNetEncoder::EfficientNetEncoder(EncoderKind kind) {
  constexpr int64_t kStemWidth = 32;
  stem_ = register_module("stem", ConvLayer(ConvSpec{3, kStemWidth, 3, 2, 1, false}));
  stem_bn_ = register_module("stem_bn", BatchNormLayer(kStemWidth));

  int64_t in = kStemWidth;
  const auto layout = efficientnet_stages(kind);
  for (size_t s = 0; s < layout.size(); ++s) {
    const auto& st = layout[s];
    torch::nn::Sequential seq;
    for (int64_t r = 0; r < st.repeats; ++r) {
      seq->push_back(MBConv(in, st.channels, st.expand_ratio, st.kernel, r == 0 ? st.stride : 1));
      in = st.channels;
    }
    stages_.push_back(register_module("stage" + std::to_string(s + 1), seq));
  }
  taps_ = {0, 1, 2, 4, 6};
  for (auto t : taps_) channels_.push_back(layout[t].channels);
}

std::vector<torch::Tensor> EfficientNetEncoder::forward(const torch::Tensor& image) {
  auto x = activate(stem_bn_->forward(stem_->forward(normalize_input(image))), Activation::kSilu);
  std::vector<torch::Tensor> pyramid;
  size_t next_tap = 0;
  for (size_t s = 0; s < stages_.size(); ++s) {
    x = stages_[s]->forward(x);
    if (next_tap < taps_.size() && taps_[next_tap] == s) {
      pyramid.push_back(x);
      ++next_tap;
    }
  }
  return pyramid;
}

TinyEncoder::TinyEncoder() : channels_{16, 24, 32, 48, 64} {
  int64_t in = 3;
  for (size_t i = 0; i < channels_.size(); ++i) {
    const int64_t c = channels_[i];
    const auto n = std::to_string(i + 1);
    Block b;
    b.down = register_module("down" + n, ConvLayer(ConvSpec{in, c, 3, 2, 1, false}));
    b.down_bn = register_module("down_bn" + n, BatchNormLayer(c));
    b.refine = register_module("refine" + n, ConvLayer(ConvSpec{c, c, 3, 1, 1, false}));
    b.refine_bn = register_module("refine_bn" + n, BatchNormLayer(c));
    blocks_.push_back(b);
    in = c;
  }
}

std::vector<torch::Tensor> TinyEncoder::forward(const torch::Tensor& image) {
  auto x = normalize_input(image);
  std::vector<torch::Tensor> pyramid;
  for (auto& b : blocks_) {
    x = activate(b.down_bn->forward(b.down->forward(x)), Activation::kElu);
    x = activate(b.refine_bn->forward(b.refine->forward(x)), Activation::kElu);
    pyramid.push_back(x);
  }
  return pyramid;
}

std::shared_ptr<Encoder> make_encoder(const EncoderConfig& cfg) {
  if (cfg.kind == EncoderKind::kTiny) return std::make_shared<TinyEncoder>();
  return std::make_shared<EfficientNetEncoder>(cfg.kind);
}

torch::Tensor normalize_input(const torch::Tensor& image) { return (image - 0.45) / 0.225; }

}  // namespace dnadepth
