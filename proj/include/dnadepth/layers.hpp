#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace dnadepth {

// Thread-local multiply-accumulate tally. While a MacCounter is alive, every
// layer forward on the same thread reports its MACs under the innermost
// MacScope name path.
class MacCounter {
 public:
  MacCounter();
  ~MacCounter();
  MacCounter(const MacCounter&) = delete;
  MacCounter& operator=(const MacCounter&) = delete;

  static bool active();
  static void record(int64_t macs);
  // Elementwise work: one MAC per output scalar.
  static void record_elementwise(const torch::Tensor& out);

  int64_t total() const;
  const std::map<std::string, int64_t>& by_scope() const { return by_scope_; }

 private:
  friend class MacScope;
  std::map<std::string, int64_t> by_scope_;
  std::vector<std::string> scopes_;
  MacCounter* previous_ = nullptr;
};

class MacScope {
 public:
  explicit MacScope(const std::string& name);
  ~MacScope();
  MacScope(const MacScope&) = delete;
  MacScope& operator=(const MacScope&) = delete;

 private:
  bool pushed_ = false;
};

enum class Activation { kNone, kElu, kRelu, kSilu, kSigmoid };

torch::Tensor activate(const torch::Tensor& x, Activation act);

struct ConvSpec {
  int64_t in = 1;
  int64_t out = 1;
  int64_t kernel = 3;
  int64_t stride = 1;
  int64_t groups = 1;
  bool bias = true;
  bool reflect = false;  // reflection padding instead of zeros
};

// Conv2d with "same" padding that reports its MACs to an active MacCounter.
class ConvLayerImpl : public torch::nn::Module {
 public:
  explicit ConvLayerImpl(const ConvSpec& spec);
  torch::Tensor forward(const torch::Tensor& x);

  const ConvSpec& spec() const { return spec_; }
  torch::nn::Conv2d conv{nullptr};

 private:
  ConvSpec spec_;
};
TORCH_MODULE(ConvLayer);

class BatchNormLayerImpl : public torch::nn::Module {
 public:
  explicit BatchNormLayerImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::BatchNorm2d bn{nullptr};
};
TORCH_MODULE(BatchNormLayer);

// Depthwise k x k convolution followed by a pointwise 1x1 convolution.
class SeparableConvImpl : public torch::nn::Module {
 public:
  SeparableConvImpl(int64_t in, int64_t out, int64_t stride = 1,
                    Activation act = Activation::kElu, int64_t kernel = 3);
  torch::Tensor forward(const torch::Tensor& x);

  ConvLayer depthwise{nullptr};
  ConvLayer pointwise{nullptr};

 private:
  Activation act_;
};
TORCH_MODULE(SeparableConv);

// Nearest-neighbour x2 upsampling.
torch::Tensor upsample2x(const torch::Tensor& x);

}  // namespace dnadepth
