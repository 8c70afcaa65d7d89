#include "sst/layers.hpp"

#include <cmath>

#include "sst/errors.hpp"

namespace sst {

namespace {

void init_uniform(Tensor& t, float bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> dist(-bound, bound);
  for (auto& v : t.vec()) v = dist(rng);
}

Param make_param(int n, int c, int h, int w, bool decay = true) {
  Param p;
  p.value = Tensor(n, c, h, w);
  p.grad = Tensor(n, c, h, w);
  p.decay = decay;
  return p;
}

void add_channel_bias(Tensor& y, const Tensor& bias) {
  const std::size_t p = y.plane();
#pragma omp parallel for schedule(static) collapse(2)
  for (int n = 0; n < y.n(); ++n)
    for (int c = 0; c < y.c(); ++c) {
      float* d = y.sample(n) + p * c;
      for (std::size_t i = 0; i < p; ++i) d[i] += bias[c];
    }
}

void accumulate_channel_sums(const Tensor& dy, Tensor& dbias) {
  const std::size_t p = dy.plane();
  for (int c = 0; c < dy.c(); ++c) {
    double acc = 0.0;
    for (int n = 0; n < dy.n(); ++n) {
      const float* d = dy.sample(n) + p * c;
      for (std::size_t i = 0; i < p; ++i) acc += d[i];
    }
    dbias[c] += static_cast<float>(acc);
  }
}

}  // namespace

// --- Conv2d ---------------------------------------------------------------

Conv2d::Conv2d(int in_channels, int out_channels, ConvGeometry geom, bool bias, std::mt19937_64& rng)
    : geom_(geom), has_bias_(bias) {
  weight_ = make_param(out_channels, in_channels, geom.kernel, geom.kernel);
  bias_ = make_param(out_channels, 1, 1, 1, false);
  const float fan_in = static_cast<float>(in_channels * geom.kernel * geom.kernel);
  init_uniform(weight_.value, std::sqrt(6.0f / fan_in), rng);
  if (has_bias_) init_uniform(bias_.value, 1.0f / std::sqrt(fan_in), rng);
}

Tensor Conv2d::forward(const Tensor& x, Mode) {
  input_ = x;
  return kernels::conv2d_forward(x, weight_.value, has_bias_ ? &bias_.value : nullptr, geom_);
}

Tensor Conv2d::backward(const Tensor& dy) {
  if (param_grads_)
    kernels::conv2d_backward_weight(input_, dy, weight_.grad, has_bias_ ? &bias_.grad : nullptr, geom_);
  return kernels::conv2d_backward_data(dy, weight_.value, input_.h(), input_.w(), geom_);
}

std::vector<Param*> Conv2d::params() {
  if (has_bias_) return {&weight_, &bias_};
  return {&weight_};
}

// --- ConvTranspose2d --------------------------------------------------------

ConvTranspose2d::ConvTranspose2d(int in_channels, int out_channels, ConvGeometry geom, bool bias,
                                 std::mt19937_64& rng)
    : geom_(geom), has_bias_(bias) {
  weight_ = make_param(in_channels, out_channels, geom.kernel, geom.kernel);
  bias_ = make_param(out_channels, 1, 1, 1, false);
  const float fan_in =
      static_cast<float>(in_channels * geom.kernel * geom.kernel) / static_cast<float>(geom.stride * geom.stride);
  init_uniform(weight_.value, std::sqrt(6.0f / fan_in), rng);
  if (has_bias_) init_uniform(bias_.value, 1.0f / std::sqrt(fan_in), rng);
}

Tensor ConvTranspose2d::forward(const Tensor& x, Mode) {
  input_ = x;
  Tensor y = kernels::conv2d_backward_data(x, weight_.value, geom_.transposed_out_size(x.h()),
                                           geom_.transposed_out_size(x.w()), geom_);
  if (has_bias_) add_channel_bias(y, bias_.value);
  return y;
}

Tensor ConvTranspose2d::backward(const Tensor& dy) {
  if (param_grads_) {
    kernels::conv2d_backward_weight(dy, input_, weight_.grad, nullptr, geom_);
    if (has_bias_) accumulate_channel_sums(dy, bias_.grad);
  }
  return kernels::conv2d_forward(dy, weight_.value, nullptr, geom_);
}

std::vector<Param*> ConvTranspose2d::params() {
  if (has_bias_) return {&weight_, &bias_};
  return {&weight_};
}

// --- BatchNorm2d ------------------------------------------------------------

BatchNorm2d::BatchNorm2d(int channels, float momentum, float eps) : momentum_(momentum), eps_(eps) {
  gamma_ = make_param(channels, 1, 1, 1, false);
  beta_ = make_param(channels, 1, 1, 1, false);
  gamma_.value.fill(1.0f);
  running_mean_ = Tensor(channels, 1, 1, 1, 0.0f);
  running_var_ = Tensor(channels, 1, 1, 1, 1.0f);
}

Tensor BatchNorm2d::forward(const Tensor& x, Mode mode) {
  const int nc = x.c();
  if (nc != gamma_.value.n()) throw ShapeError("batchnorm channel mismatch at " + x.shape_str());
  const std::size_t p = x.plane();
  const double count = static_cast<double>(x.n()) * p;
  Tensor y(x.n(), x.c(), x.h(), x.w());
  xhat_ = Tensor(x.n(), x.c(), x.h(), x.w());
  inv_std_.assign(nc, 0.0f);
  cached_train_ = (mode == Mode::kTrain);
#pragma omp parallel for schedule(static)
  for (int c = 0; c < nc; ++c) {
    float mean, inv;
    if (mode == Mode::kTrain) {
      double s = 0.0, ss = 0.0;
      for (int n = 0; n < x.n(); ++n) {
        const float* d = x.sample(n) + p * c;
        for (std::size_t i = 0; i < p; ++i) {
          s += d[i];
          ss += static_cast<double>(d[i]) * d[i];
        }
      }
      const double m = s / count;
      const double var = std::max(0.0, ss / count - m * m);
      mean = static_cast<float>(m);
      inv = static_cast<float>(1.0 / std::sqrt(var + eps_));
      const double unbiased = count > 1 ? var * count / (count - 1) : var;
      running_mean_[c] = (1 - momentum_) * running_mean_[c] + momentum_ * mean;
      running_var_[c] = (1 - momentum_) * running_var_[c] + momentum_ * static_cast<float>(unbiased);
    } else {
      mean = running_mean_[c];
      inv = 1.0f / std::sqrt(running_var_[c] + eps_);
    }
    inv_std_[c] = inv;
    const float g = gamma_.value[c], b = beta_.value[c];
    for (int n = 0; n < x.n(); ++n) {
      const float* d = x.sample(n) + p * c;
      float* xh = xhat_.sample(n) + p * c;
      float* o = y.sample(n) + p * c;
      for (std::size_t i = 0; i < p; ++i) {
        xh[i] = (d[i] - mean) * inv;
        o[i] = g * xh[i] + b;
      }
    }
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& dy) {
  const int nc = dy.c();
  const std::size_t p = dy.plane();
  const double count = static_cast<double>(dy.n()) * p;
  Tensor dx(dy.n(), dy.c(), dy.h(), dy.w());
#pragma omp parallel for schedule(static)
  for (int c = 0; c < nc; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int n = 0; n < dy.n(); ++n) {
      const float* g = dy.sample(n) + p * c;
      const float* xh = xhat_.sample(n) + p * c;
      for (std::size_t i = 0; i < p; ++i) {
        sum_dy += g[i];
        sum_dy_xhat += static_cast<double>(g[i]) * xh[i];
      }
    }
    if (param_grads_) {
      gamma_.grad[c] += static_cast<float>(sum_dy_xhat);
      beta_.grad[c] += static_cast<float>(sum_dy);
    }
    const float scale = gamma_.value[c] * inv_std_[c];
    const float mean_dy = static_cast<float>(sum_dy / count);
    const float mean_dy_xhat = static_cast<float>(sum_dy_xhat / count);
    for (int n = 0; n < dy.n(); ++n) {
      const float* g = dy.sample(n) + p * c;
      const float* xh = xhat_.sample(n) + p * c;
      float* o = dx.sample(n) + p * c;
      if (cached_train_) {
        for (std::size_t i = 0; i < p; ++i) o[i] = scale * (g[i] - mean_dy - xh[i] * mean_dy_xhat);
      } else {
        for (std::size_t i = 0; i < p; ++i) o[i] = scale * g[i];
      }
    }
  }
  return dx;
}

// --- Activations --------------------------------------------------------------

Tensor ReLU::forward(const Tensor& x, Mode) {
  output_ = x;
  auto& v = output_.vec();
#pragma omp parallel for simd schedule(static)
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = v[i] > 0.0f ? v[i] : 0.0f;
  return output_;
}

Tensor ReLU::backward(const Tensor& dy) {
  Tensor dx = dy;
  auto& d = dx.vec();
  const auto& o = output_.vec();
#pragma omp parallel for simd schedule(static)
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = o[i] > 0.0f ? d[i] : 0.0f;
  return dx;
}

Tensor Sigmoid::forward(const Tensor& x, Mode) {
  output_ = x;
  auto& v = output_.vec();
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 1.0f / (1.0f + std::exp(-v[i]));
  return output_;
}

Tensor Sigmoid::backward(const Tensor& dy) {
  Tensor dx = dy;
  auto& d = dx.vec();
  const auto& o = output_.vec();
#pragma omp parallel for simd schedule(static)
  for (std::size_t i = 0; i < d.size(); ++i) d[i] *= o[i] * (1.0f - o[i]);
  return dx;
}

// --- Pooling ------------------------------------------------------------------

Tensor MaxPool2::forward(const Tensor& x, Mode) {
  input_shape_ = Tensor(x.n(), x.c(), x.h(), x.w());
  return kernels::maxpool2_forward(x, argmax_);
}

Tensor MaxPool2::backward(const Tensor& dy) { return kernels::maxpool2_backward(dy, argmax_, input_shape_); }

Tensor GlobalAvgPool::forward(const Tensor& x, Mode) {
  h_ = x.h();
  w_ = x.w();
  Tensor y(x.n(), x.c(), 1, 1);
  const std::size_t p = x.plane();
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c) {
      const float* d = x.sample(n) + p * c;
      double s = 0.0;
      for (std::size_t i = 0; i < p; ++i) s += d[i];
      y.at(n, c, 0, 0) = static_cast<float>(s / static_cast<double>(p));
    }
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& dy) {
  Tensor dx(dy.n(), dy.c(), h_, w_);
  const std::size_t p = dx.plane();
  const float inv = 1.0f / static_cast<float>(p);
  for (int n = 0; n < dy.n(); ++n)
    for (int c = 0; c < dy.c(); ++c) {
      float* d = dx.sample(n) + p * c;
      const float g = dy.at(n, c, 0, 0) * inv;
      for (std::size_t i = 0; i < p; ++i) d[i] = g;
    }
  return dx;
}

// --- Linear -------------------------------------------------------------------

Linear::Linear(int in_features, int out_features, std::mt19937_64& rng) {
  weight_ = make_param(out_features, in_features, 1, 1);
  bias_ = make_param(out_features, 1, 1, 1, false);
  const float bound = 1.0f / std::sqrt(static_cast<float>(in_features));
  init_uniform(weight_.value, bound, rng);
  init_uniform(bias_.value, bound, rng);
}

Tensor Linear::forward(const Tensor& x, Mode) {
  input_ = x;
  return kernels::linear_forward(x, weight_.value, &bias_.value);
}

Tensor Linear::backward(const Tensor& dy) {
  if (param_grads_) kernels::linear_backward_weight(input_, dy, weight_.grad, &bias_.grad);
  return kernels::linear_backward_data(dy, weight_.value, input_);
}

// --- ChannelMask --------------------------------------------------------------

ChannelMask::ChannelMask(int channels) : mask_(1, channels, 1, 1, 1.0f) {}

Tensor ChannelMask::forward(const Tensor& x, Mode) {
  Tensor y = x;
  const std::size_t p = y.plane();
  for (int n = 0; n < y.n(); ++n)
    for (int c = 0; c < y.c(); ++c) {
      if (mask_[c] != 0.0f) continue;
      float* d = y.sample(n) + p * c;
      std::fill(d, d + p, 0.0f);
    }
  return y;
}

Tensor ChannelMask::backward(const Tensor& dy) { return forward(dy, Mode::kEval); }

// --- ResidualBlock ------------------------------------------------------------

ResidualBlock::ResidualBlock(int in_channels, int out_channels, int stride, std::mt19937_64& rng) {
  main_.push_back(std::make_unique<Conv2d>(in_channels, out_channels, ConvGeometry{3, stride, 1}, false, rng));
  main_.push_back(std::make_unique<BatchNorm2d>(out_channels));
  main_.push_back(std::make_unique<ReLU>());
  main_.push_back(std::make_unique<Conv2d>(out_channels, out_channels, ConvGeometry{3, 1, 1}, false, rng));
  main_.push_back(std::make_unique<BatchNorm2d>(out_channels));
  if (stride != 1 || in_channels != out_channels) {
    shortcut_.push_back(
        std::make_unique<Conv2d>(in_channels, out_channels, ConvGeometry{1, stride, 0}, false, rng));
    shortcut_.push_back(std::make_unique<BatchNorm2d>(out_channels));
  }
}

ResidualBlock::ResidualBlock(const ResidualBlock& other) : Layer(other), out_relu_(other.out_relu_) {
  for (const auto& l : other.main_) main_.push_back(l->clone());
  for (const auto& l : other.shortcut_) shortcut_.push_back(l->clone());
}

Tensor ResidualBlock::forward(const Tensor& x, Mode mode) {
  Tensor m = x;
  for (auto& l : main_) m = l->forward(m, mode);
  Tensor s = x;
  for (auto& l : shortcut_) s = l->forward(s, mode);
  if (!m.same_shape(s)) throw ShapeError("residual branch shapes differ " + m.shape_str() + " " + s.shape_str());
  auto& mv = m.vec();
  const auto& sv = s.vec();
#pragma omp parallel for simd schedule(static)
  for (std::size_t i = 0; i < mv.size(); ++i) mv[i] += sv[i];
  return out_relu_.forward(m, mode);
}

Tensor ResidualBlock::backward(const Tensor& dy) {
  const Tensor d = out_relu_.backward(dy);
  Tensor dm = d;
  for (auto it = main_.rbegin(); it != main_.rend(); ++it) dm = (*it)->backward(dm);
  Tensor ds = d;
  for (auto it = shortcut_.rbegin(); it != shortcut_.rend(); ++it) ds = (*it)->backward(ds);
  auto& mv = dm.vec();
  const auto& sv = ds.vec();
#pragma omp parallel for simd schedule(static)
  for (std::size_t i = 0; i < mv.size(); ++i) mv[i] += sv[i];
  return dm;
}

std::vector<Param*> ResidualBlock::params() {
  std::vector<Param*> out;
  for (auto& l : main_)
    for (auto* p : l->params()) out.push_back(p);
  for (auto& l : shortcut_)
    for (auto* p : l->params()) out.push_back(p);
  return out;
}

std::vector<Tensor*> ResidualBlock::buffers() {
  std::vector<Tensor*> out;
  for (auto& l : main_)
    for (auto* b : l->buffers()) out.push_back(b);
  for (auto& l : shortcut_)
    for (auto* b : l->buffers()) out.push_back(b);
  return out;
}

void ResidualBlock::set_param_grads(bool on) {
  Layer::set_param_grads(on);
  for (auto& l : main_) l->set_param_grads(on);
  for (auto& l : shortcut_) l->set_param_grads(on);
}

}  // namespace sst
