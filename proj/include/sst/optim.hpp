#pragma once

#include <span>
#include <vector>

#include "sst/tensor.hpp"

namespace sst {

class Sgd {
 public:
  Sgd(std::vector<Param*> params, float lr, float momentum, float weight_decay);
  void step();
  void set_lr(float lr) { lr_ = lr; }
  float lr() const { return lr_; }

 private:
  std::vector<Param*> params_;
  std::vector<std::vector<float>> velocity_;
  float lr_, momentum_, weight_decay_;
};

class Adam {
 public:
  Adam(std::vector<Param*> params, float lr, float beta1 = 0.9f, float beta2 = 0.999f, float eps = 1e-8f);
  void step();
  void set_lr(float lr) { lr_ = lr; }

 private:
  std::vector<Param*> params_;
  std::vector<std::vector<float>> m_, v_;
  float lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

// Row-wise softmax of [N, K, 1, 1] logits.
Tensor softmax(const Tensor& logits);

// Mean cross-entropy over the batch; writes d(loss)/d(logits) into `dlogits`.
double softmax_cross_entropy(const Tensor& logits, std::span<const int> labels, Tensor& dlogits);

// Mean squared error over every element; writes the gradient into `dpred`.
double mse_loss(const Tensor& pred, const Tensor& target, Tensor& dpred);

// Argmax with ties resolved toward the lowest index.
int argmax(std::span<const float> values);

}  // namespace sst
