#include "dnadepth/layers.hpp"

#include <numeric>

namespace dnadepth {

namespace F = torch::nn::functional;

namespace {
thread_local MacCounter* g_counter = nullptr;

std::string joined(const std::vector<std::string>& parts) {
  std::string out;
  for (const auto& p : parts) {
    if (!out.empty()) out += '.';
    out += p;
  }
  return out.empty() ? "other" : out;
}
}  // namespace

MacCounter::MacCounter() : previous_(g_counter) { g_counter = this; }

MacCounter::~MacCounter() { g_counter = previous_; }

bool MacCounter::active() { return g_counter != nullptr; }

void MacCounter::record(int64_t macs) {
  if (g_counter) g_counter->by_scope_[joined(g_counter->scopes_)] += macs;
}

void MacCounter::record_elementwise(const torch::Tensor& out) {
  if (g_counter) record(out.numel());
}

int64_t MacCounter::total() const {
  return std::accumulate(by_scope_.begin(), by_scope_.end(), int64_t{0},
                         [](int64_t acc, const auto& kv) { return acc + kv.second; });
}

MacScope::MacScope(const std::string& name) {
  if (g_counter) {
    g_counter->scopes_.push_back(name);
    pushed_ = true;
  }
}

MacScope::~MacScope() {
  if (pushed_ && g_counter) g_counter->scopes_.pop_back();
}

torch::Tensor activate(const torch::Tensor& x, Activation act) {
  torch::Tensor y;
  switch (act) {
    case Activation::kNone:
      return x;
    case Activation::kElu:
      y = F::elu(x);
      break;
    case Activation::kRelu:
      y = torch::relu(x);
      break;
    case Activation::kSilu:
      y = F::silu(x);
      break;
    case Activation::kSigmoid:
      y = torch::sigmoid(x);
      break;
  }
  MacCounter::record_elementwise(y);
  return y;
}

ConvLayerImpl::ConvLayerImpl(const ConvSpec& spec) : spec_(spec) {
  auto opts = torch::nn::Conv2dOptions(spec.in, spec.out, spec.kernel)
                  .stride(spec.stride)
                  .padding(spec.kernel / 2)
                  .groups(spec.groups)
                  .bias(spec.bias);
  if (spec.reflect && spec.kernel > 1) opts.padding_mode(torch::kReflect);
  conv = register_module("conv", torch::nn::Conv2d(opts));
}

torch::Tensor ConvLayerImpl::forward(const torch::Tensor& x) {
  auto y = conv->forward(x);
  if (MacCounter::active()) {
    const int64_t per_output = spec_.kernel * spec_.kernel * (spec_.in / spec_.groups);
    MacCounter::record(per_output * y.numel());
  }
  return y;
}

BatchNormLayerImpl::BatchNormLayerImpl(int64_t channels) {
  bn = register_module("bn", torch::nn::BatchNorm2d(channels));
}

torch::Tensor BatchNormLayerImpl::forward(const torch::Tensor& x) {
  auto y = bn->forward(x);
  MacCounter::record_elementwise(y);
  return y;
}

SeparableConvImpl::SeparableConvImpl(int64_t in, int64_t out, int64_t stride, Activation act,
                                     int64_t kernel)
    : act_(act) {
  depthwise = register_module(
      "depthwise", ConvLayer(ConvSpec{in, in, kernel, stride, in, false, stride == 1}));
  pointwise = register_module("pointwise", ConvLayer(ConvSpec{in, out, 1, 1, 1, true}));
}

torch::Tensor SeparableConvImpl::forward(const torch::Tensor& x) {
  return activate(pointwise->forward(depthwise->forward(x)), act_);
}

torch::Tensor upsample2x(const torch::Tensor& x) {
  auto y = F::interpolate(x, F::InterpolateFuncOptions()
                                 .scale_factor(std::vector<double>{2.0, 2.0})
                                 .mode(torch::kNearest));
  MacCounter::record_elementwise(y);
  return y;
}

}  // namespace dnadepth
