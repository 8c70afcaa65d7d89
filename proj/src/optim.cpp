#include "sst/optim.hpp"

#include <algorithm>
#include <cmath>

#include "sst/errors.hpp"

namespace sst {

Sgd::Sgd(std::vector<Param*> params, float lr, float momentum, float weight_decay)
    : params_(std::move(params)), lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
  for (auto* p : params_) velocity_.emplace_back(p->value.size(), 0.0f);
}

void Sgd::step() {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& w = params_[k]->value.vec();
    const auto& g = params_[k]->grad.vec();
    auto& v = velocity_[k];
    const float wd = params_[k]->decay ? weight_decay_ : 0.0f;
#pragma omp parallel for simd schedule(static)
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = momentum_ * v[i] + g[i] + wd * w[i];
      w[i] -= lr_ * v[i];
    }
  }
}

Adam::Adam(std::vector<Param*> params, float lr, float beta1, float beta2, float eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (auto* p : params_) {
    m_.emplace_back(p->value.size(), 0.0f);
    v_.emplace_back(p->value.size(), 0.0f);
  }
}

void Adam::step() {
  ++t_;
  const float c1 = 1.0f - std::pow(beta1_, static_cast<float>(t_));
  const float c2 = 1.0f - std::pow(beta2_, static_cast<float>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& w = params_[k]->value.vec();
    const auto& g = params_[k]->grad.vec();
    auto& m = m_[k];
    auto& v = v_[k];
#pragma omp parallel for simd schedule(static)
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (1 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1 - beta2_) * g[i] * g[i];
      w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

Tensor softmax(const Tensor& logits) {
  Tensor p = logits;
  const int k = logits.c();
  for (int n = 0; n < logits.n(); ++n) {
    float* row = p.sample(n);
    const float mx = *std::max_element(row, row + k);
    double sum = 0.0;
    for (int j = 0; j < k; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (int j = 0; j < k; ++j) row[j] = static_cast<float>(row[j] / sum);
  }
  return p;
}

double softmax_cross_entropy(const Tensor& logits, std::span<const int> labels, Tensor& dlogits) {
  if (static_cast<std::size_t>(logits.n()) != labels.size()) throw ShapeError("label count does not match batch");
  const int k = logits.c();
  dlogits = softmax(logits);
  double loss = 0.0;
  const float inv_n = 1.0f / static_cast<float>(logits.n());
  for (int n = 0; n < logits.n(); ++n) {
    float* row = dlogits.sample(n);
    const int y = labels[n];
    if (y < 0 || y >= k) throw DataError("label " + std::to_string(y) + " out of range");
    loss -= std::log(std::max(row[y], 1e-12f));
    row[y] -= 1.0f;
    for (int j = 0; j < k; ++j) row[j] *= inv_n;
  }
  return loss / logits.n();
}

double mse_loss(const Tensor& pred, const Tensor& target, Tensor& dpred) {
  if (!pred.same_shape(target)) throw ShapeError("mse_loss shape mismatch");
  dpred = Tensor(pred.n(), pred.c(), pred.h(), pred.w());
  const float scale = 2.0f / static_cast<float>(pred.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const float d = pred[i] - target[i];
    acc += static_cast<double>(d) * d;
    dpred[i] = scale * d;
  }
  return acc / static_cast<double>(pred.size());
}

int argmax(std::span<const float> values) {
  int best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = static_cast<int>(i);
  return best;
}

}  // namespace sst
