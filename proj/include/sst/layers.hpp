#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "sst/kernels.hpp"
#include "sst/tensor.hpp"

namespace sst {

enum class Mode { kTrain, kEval };

// A differentiable stage. forward() caches whatever backward() needs, so a
// backward call always refers to the most recent forward call.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string kind() const = 0;
  virtual Tensor forward(const Tensor& x, Mode mode) = 0;
  virtual Tensor backward(const Tensor& dy) = 0;
  virtual std::vector<Param*> params() { return {}; }
  // Non-trainable persistent state (running statistics, channel masks).
  virtual std::vector<Tensor*> buffers() { return {}; }
  virtual std::unique_ptr<Layer> clone() const = 0;

  // When false, backward() skips parameter gradients and only propagates
  // the input gradient.
  virtual void set_param_grads(bool on) { param_grads_ = on; }
  bool param_grads() const { return param_grads_; }

 protected:
  bool param_grads_ = true;
};

class Conv2d : public Layer {
 public:
  Conv2d(int in_channels, int out_channels, ConvGeometry geom, bool bias, std::mt19937_64& rng);

  std::string kind() const override { return "conv2d"; }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<Param*> params() override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }

  const ConvGeometry& geometry() const { return geom_; }
  Param& weight() { return weight_; }
  int out_channels() const { return weight_.value.n(); }

 private:
  ConvGeometry geom_;
  Param weight_;
  Param bias_;
  bool has_bias_;
  Tensor input_;
};

// Weight layout [Cin, Cout, k, k]; output size (in-1)*stride - 2*pad + k.
class ConvTranspose2d : public Layer {
 public:
  ConvTranspose2d(int in_channels, int out_channels, ConvGeometry geom, bool bias, std::mt19937_64& rng);

  std::string kind() const override { return "conv_transpose2d"; }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<Param*> params() override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ConvTranspose2d>(*this); }

 private:
  ConvGeometry geom_;
  Param weight_;
  Param bias_;
  bool has_bias_;
  Tensor input_;
};

class BatchNorm2d : public Layer {
 public:
  explicit BatchNorm2d(int channels, float momentum = 0.1f, float eps = 1e-5f);

  std::string kind() const override { return "batchnorm2d"; }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<Param*> params() override { return {&gamma_, &beta_}; }
  std::vector<Tensor*> buffers() override { return {&running_mean_, &running_var_}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<BatchNorm2d>(*this); }

 private:
  float momentum_, eps_;
  Param gamma_, beta_;
  Tensor running_mean_, running_var_;
  // Backward cache.
  Tensor xhat_;
  std::vector<float> inv_std_;
  bool cached_train_ = false;
};

class ReLU : public Layer {
 public:
  std::string kind() const override { return "relu"; }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& dy) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ReLU>(*this); }

 private:
  Tensor output_;
};

class Sigmoid : public Layer {
 public:
  std::string kind() const override { return "sigmoid"; }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& dy) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Sigmoid>(*this); }

 private:
  Tensor output_;
};

class MaxPool2 : public Layer {
 public:
  std::string kind() const override { return "maxpool2"; }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& dy) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPool2>(*this); }

 private:
  Tensor input_shape_;
  std::vector<std::uint32_t> argmax_;
};

class GlobalAvgPool : public Layer {
 public:
  std::string kind() const override { return "global_avg_pool"; }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& dy) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<GlobalAvgPool>(*this); }

 private:
  int h_ = 0, w_ = 0;
};

class Linear : public Layer {
 public:
  Linear(int in_features, int out_features, std::mt19937_64& rng);

  std::string kind() const override { return "linear"; }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<Param*> params() override { return {&weight_, &bias_}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Linear>(*this); }

 private:
  Param weight_, bias_;
  Tensor input_;
};

// Multiplies each channel by a fixed 0/1 mask; used to prune channels.
class ChannelMask : public Layer {
 public:
  explicit ChannelMask(int channels);

  std::string kind() const override { return "channel_mask"; }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<Tensor*> buffers() override { return {&mask_}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ChannelMask>(*this); }

  int channels() const { return mask_.c(); }
  void set_active(int channel, bool active) { mask_[channel] = active ? 1.0f : 0.0f; }
  bool active(int channel) const { return mask_[channel] != 0.0f; }

 private:
  Tensor mask_;
};

// conv-bn-relu-conv-bn plus identity or 1x1 projection shortcut, then relu.
class ResidualBlock : public Layer {
 public:
  ResidualBlock(int in_channels, int out_channels, int stride, std::mt19937_64& rng);
  ResidualBlock(const ResidualBlock& other);

  std::string kind() const override { return "residual_block"; }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<Param*> params() override;
  std::vector<Tensor*> buffers() override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ResidualBlock>(*this); }
  void set_param_grads(bool on) override;

 private:
  std::vector<std::unique_ptr<Layer>> main_;
  std::vector<std::unique_ptr<Layer>> shortcut_;
  ReLU out_relu_;
};

}  // namespace sst
