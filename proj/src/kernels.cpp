#include "sst/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>

#include "sst/errors.hpp"

namespace sst::kernels {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

// Keeps each im2col chunk (~1 MB) cache-resident; larger chunks were slower.
constexpr std::size_t kColBudget = std::size_t{1} << 18;

int chunk_samples(std::size_t per_sample, int n) {
  return std::clamp(static_cast<int>(kColBudget / std::max<std::size_t>(per_sample, 1)), 1, n);
}

// col is [Cin*k*k, count*P] row-major, columns grouped by sample.
void im2col(const Tensor& x, int n0, int count, const ConvGeometry& g, int oh, int ow, float* col) {
  const int cin = x.c(), h = x.h(), w = x.w(), k = g.kernel;
  const std::size_t p = static_cast<std::size_t>(oh) * ow;
  const std::size_t cols = p * count;
  const int rows = cin * k * k;
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    const int ci = r / (k * k), ky = (r / k) % k, kx = r % k;
    float* dst = col + cols * r;
    for (int s = 0; s < count; ++s) {
      const float* src = x.sample(n0 + s) + static_cast<std::size_t>(ci) * h * w;
      float* d = dst + p * s;
      for (int oy = 0; oy < oh; ++oy) {
        const int iy = oy * g.stride - g.pad + ky;
        float* drow = d + static_cast<std::size_t>(oy) * ow;
        if (iy < 0 || iy >= h) {
          std::fill(drow, drow + ow, 0.0f);
          continue;
        }
        const float* srow = src + static_cast<std::size_t>(iy) * w;
        for (int ox = 0; ox < ow; ++ox) {
          const int ix = ox * g.stride - g.pad + kx;
          drow[ox] = (ix >= 0 && ix < w) ? srow[ix] : 0.0f;
        }
      }
    }
  }
}

void col2im(const float* col, int n0, int count, const ConvGeometry& g, int oh, int ow, Tensor& dx) {
  const int cin = dx.c(), h = dx.h(), w = dx.w(), k = g.kernel;
  const std::size_t p = static_cast<std::size_t>(oh) * ow;
  const std::size_t cols = p * count;
#pragma omp parallel for schedule(static) collapse(2)
  for (int s = 0; s < count; ++s) {
    for (int ci = 0; ci < cin; ++ci) {
      float* dst = dx.sample(n0 + s) + static_cast<std::size_t>(ci) * h * w;
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const int r = (ci * k + ky) * k + kx;
          const float* src = col + cols * r + p * s;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= h) continue;
            float* drow = dst + static_cast<std::size_t>(iy) * w;
            const float* srow = src + static_cast<std::size_t>(oy) * ow;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * g.stride - g.pad + kx;
              if (ix >= 0 && ix < w) drow[ix] += srow[ox];
            }
          }
        }
      }
    }
  }
}

// [Cout, count*P] <-> NCHW sample block.
void gather_channels_major(const Tensor& t, int n0, int count, float* out) {
  const int c = t.c();
  const std::size_t p = t.plane();
#pragma omp parallel for schedule(static)
  for (int o = 0; o < c; ++o)
    for (int s = 0; s < count; ++s)
      std::copy_n(t.sample(n0 + s) + p * o, p, out + (static_cast<std::size_t>(o) * count + s) * p);
}

void scatter_channels_major(const float* in, int n0, int count, Tensor& t) {
  const int c = t.c();
  const std::size_t p = t.plane();
#pragma omp parallel for schedule(static)
  for (int o = 0; o < c; ++o)
    for (int s = 0; s < count; ++s)
      std::copy_n(in + (static_cast<std::size_t>(o) * count + s) * p, p, t.sample(n0 + s) + p * o);
}

void check_conv(const Tensor& x, const Tensor& weight, const ConvGeometry& g) {
  if (weight.c() != x.c() || weight.h() != g.kernel || weight.w() != g.kernel)
    throw ShapeError("conv weight " + weight.shape_str() + " incompatible with input " + x.shape_str());
}

}  // namespace

Tensor conv2d_forward(const Tensor& x, const Tensor& weight, const Tensor* bias, const ConvGeometry& g) {
  check_conv(x, weight, g);
  const int cout = weight.n();
  const int oh = g.out_size(x.h()), ow = g.out_size(x.w());
  if (oh <= 0 || ow <= 0) throw ShapeError("conv output would be empty for input " + x.shape_str());
  const int kdim = x.c() * g.kernel * g.kernel;
  const std::size_t p = static_cast<std::size_t>(oh) * ow;
  Tensor y(x.n(), cout, oh, ow);
  const int chunk = chunk_samples(kdim * p + cout * p, x.n());
  FloatBuffer col(static_cast<std::size_t>(kdim) * chunk * p);
  FloatBuffer out(static_cast<std::size_t>(cout) * chunk * p);
  ConstMapMat wmat(weight.data(), cout, kdim);
  for (int n0 = 0; n0 < x.n(); n0 += chunk) {
    const int count = std::min(chunk, x.n() - n0);
    const Eigen::Index cols = static_cast<Eigen::Index>(count * p);
    im2col(x, n0, count, g, oh, ow, col.data());
    MapMat omat(out.data(), cout, cols);
    omat.noalias() = wmat * ConstMapMat(col.data(), kdim, cols);
    if (bias) {
      for (int o = 0; o < cout; ++o) omat.row(o).array() += (*bias)[o];
    }
    scatter_channels_major(out.data(), n0, count, y);
  }
  return y;
}

Tensor conv2d_backward_data(const Tensor& dy, const Tensor& weight, int in_h, int in_w, const ConvGeometry& g) {
  const int cout = weight.n(), cin = weight.c();
  if (dy.c() != cout) throw ShapeError("conv grad " + dy.shape_str() + " incompatible with weight " + weight.shape_str());
  const int oh = dy.h(), ow = dy.w();
  const int kdim = cin * g.kernel * g.kernel;
  const std::size_t p = static_cast<std::size_t>(oh) * ow;
  Tensor dx(dy.n(), cin, in_h, in_w);
  const int chunk = chunk_samples(kdim * p + cout * p, dy.n());
  FloatBuffer col(static_cast<std::size_t>(kdim) * chunk * p);
  FloatBuffer grad(static_cast<std::size_t>(cout) * chunk * p);
  ConstMapMat wmat(weight.data(), cout, kdim);
  for (int n0 = 0; n0 < dy.n(); n0 += chunk) {
    const int count = std::min(chunk, dy.n() - n0);
    const Eigen::Index cols = static_cast<Eigen::Index>(count * p);
    gather_channels_major(dy, n0, count, grad.data());
    MapMat cmat(col.data(), kdim, cols);
    cmat.noalias() = wmat.transpose() * ConstMapMat(grad.data(), cout, cols);
    col2im(col.data(), n0, count, g, oh, ow, dx);
  }
  return dx;
}

void conv2d_backward_weight(const Tensor& x, const Tensor& dy, Tensor& dweight, Tensor* dbias,
                            const ConvGeometry& g) {
  const int cout = dweight.n();
  const int oh = dy.h(), ow = dy.w();
  const int kdim = x.c() * g.kernel * g.kernel;
  const std::size_t p = static_cast<std::size_t>(oh) * ow;
  const int chunk = chunk_samples(kdim * p + cout * p, x.n());
  FloatBuffer col(static_cast<std::size_t>(kdim) * chunk * p);
  FloatBuffer grad(static_cast<std::size_t>(cout) * chunk * p);
  MapMat dw(dweight.data(), cout, kdim);
  for (int n0 = 0; n0 < x.n(); n0 += chunk) {
    const int count = std::min(chunk, x.n() - n0);
    const Eigen::Index cols = static_cast<Eigen::Index>(count * p);
    im2col(x, n0, count, g, oh, ow, col.data());
    gather_channels_major(dy, n0, count, grad.data());
    ConstMapMat gmat(grad.data(), cout, cols);
    dw.noalias() += gmat * ConstMapMat(col.data(), kdim, cols).transpose();
    if (dbias) {
      for (int o = 0; o < cout; ++o) (*dbias)[o] += gmat.row(o).sum();
    }
  }
}

Tensor linear_forward(const Tensor& x, const Tensor& weight, const Tensor* bias) {
  const int in = static_cast<int>(x.sample_size());
  const int out = weight.n();
  if (static_cast<int>(weight.sample_size()) != in)
    throw ShapeError("linear weight " + weight.shape_str() + " incompatible with input " + x.shape_str());
  Tensor y(x.n(), out, 1, 1);
  MapMat ymat(y.data(), x.n(), out);
  ymat.noalias() = ConstMapMat(x.data(), x.n(), in) * ConstMapMat(weight.data(), out, in).transpose();
  if (bias) {
    for (int s = 0; s < x.n(); ++s)
      for (int o = 0; o < out; ++o) ymat(s, o) += (*bias)[o];
  }
  return y;
}

Tensor linear_backward_data(const Tensor& dy, const Tensor& weight, const Tensor& x_shape_like) {
  const int in = static_cast<int>(weight.sample_size());
  Tensor dx(x_shape_like.n(), x_shape_like.c(), x_shape_like.h(), x_shape_like.w());
  MapMat(dx.data(), dy.n(), in).noalias() =
      ConstMapMat(dy.data(), dy.n(), dy.c()) * ConstMapMat(weight.data(), weight.n(), in);
  return dx;
}

void linear_backward_weight(const Tensor& x, const Tensor& dy, Tensor& dweight, Tensor* dbias) {
  const int in = static_cast<int>(x.sample_size());
  ConstMapMat g(dy.data(), dy.n(), dy.c());
  MapMat(dweight.data(), dweight.n(), in).noalias() += g.transpose() * ConstMapMat(x.data(), x.n(), in);
  if (dbias) {
    for (int o = 0; o < dy.c(); ++o) (*dbias)[o] += g.col(o).sum();
  }
}

Tensor maxpool2_forward(const Tensor& x, std::vector<std::uint32_t>& argmax) {
  const int oh = x.h() / 2, ow = x.w() / 2;
  Tensor y(x.n(), x.c(), oh, ow);
  argmax.assign(y.size(), 0);
  const int planes = x.n() * x.c();
#pragma omp parallel for schedule(static)
  for (int pl = 0; pl < planes; ++pl) {
    const std::size_t in_base = static_cast<std::size_t>(pl) * x.plane();
    const std::size_t out_base = static_cast<std::size_t>(pl) * y.plane();
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        std::size_t best = in_base + static_cast<std::size_t>(2 * oy) * x.w() + 2 * ox;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const std::size_t idx = in_base + static_cast<std::size_t>(2 * oy + dy) * x.w() + 2 * ox + dx;
            if (x[idx] > x[best]) best = idx;
          }
        y[out_base + static_cast<std::size_t>(oy) * ow + ox] = x[best];
        argmax[out_base + static_cast<std::size_t>(oy) * ow + ox] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return y;
}

Tensor maxpool2_backward(const Tensor& dy, const std::vector<std::uint32_t>& argmax, const Tensor& x_shape_like) {
  Tensor dx(x_shape_like.n(), x_shape_like.c(), x_shape_like.h(), x_shape_like.w());
  // Windows do not overlap, so every input index receives at most one write.
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < dy.size(); ++i) dx[argmax[i]] += dy[i];
  return dx;
}

}  // namespace sst::kernels
