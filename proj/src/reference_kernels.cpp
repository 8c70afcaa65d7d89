#include "sst/errors.hpp"
#include "sst/kernels.hpp"

namespace sst::reference {

Tensor conv2d_forward(const Tensor& x, const Tensor& weight, const Tensor* bias, const ConvGeometry& g) {
  if (weight.c() != x.c()) throw ShapeError("reference conv: channel mismatch");
  const int oh = g.out_size(x.h()), ow = g.out_size(x.w());
  Tensor y(x.n(), weight.n(), oh, ow);
  for (int n = 0; n < x.n(); ++n)
    for (int o = 0; o < weight.n(); ++o)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = bias ? (*bias)[o] : 0.0;
          for (int i = 0; i < x.c(); ++i)
            for (int ky = 0; ky < g.kernel; ++ky)
              for (int kx = 0; kx < g.kernel; ++kx) {
                const int iy = oy * g.stride - g.pad + ky;
                const int ix = ox * g.stride - g.pad + kx;
                if (iy < 0 || iy >= x.h() || ix < 0 || ix >= x.w()) continue;
                acc += static_cast<double>(weight.at(o, i, ky, kx)) * x.at(n, i, iy, ix);
              }
          y.at(n, o, oy, ox) = static_cast<float>(acc);
        }
  return y;
}

Tensor conv2d_backward_data(const Tensor& dy, const Tensor& weight, int in_h, int in_w, const ConvGeometry& g) {
  Tensor dx(dy.n(), weight.c(), in_h, in_w);
  for (int n = 0; n < dy.n(); ++n)
    for (int o = 0; o < weight.n(); ++o)
      for (int oy = 0; oy < dy.h(); ++oy)
        for (int ox = 0; ox < dy.w(); ++ox) {
          const float gv = dy.at(n, o, oy, ox);
          for (int i = 0; i < weight.c(); ++i)
            for (int ky = 0; ky < g.kernel; ++ky)
              for (int kx = 0; kx < g.kernel; ++kx) {
                const int iy = oy * g.stride - g.pad + ky;
                const int ix = ox * g.stride - g.pad + kx;
                if (iy < 0 || iy >= in_h || ix < 0 || ix >= in_w) continue;
                dx.at(n, i, iy, ix) += gv * weight.at(o, i, ky, kx);
              }
        }
  return dx;
}

void conv2d_backward_weight(const Tensor& x, const Tensor& dy, Tensor& dweight, Tensor* dbias,
                            const ConvGeometry& g) {
  for (int n = 0; n < x.n(); ++n)
    for (int o = 0; o < dy.c(); ++o)
      for (int oy = 0; oy < dy.h(); ++oy)
        for (int ox = 0; ox < dy.w(); ++ox) {
          const float gv = dy.at(n, o, oy, ox);
          if (dbias) (*dbias)[o] += gv;
          for (int i = 0; i < x.c(); ++i)
            for (int ky = 0; ky < g.kernel; ++ky)
              for (int kx = 0; kx < g.kernel; ++kx) {
                const int iy = oy * g.stride - g.pad + ky;
                const int ix = ox * g.stride - g.pad + kx;
                if (iy < 0 || iy >= x.h() || ix < 0 || ix >= x.w()) continue;
                dweight.at(o, i, ky, kx) += gv * x.at(n, i, iy, ix);
              }
        }
}

Tensor linear_forward(const Tensor& x, const Tensor& weight, const Tensor* bias) {
  const std::size_t in = x.sample_size();
  Tensor y(x.n(), weight.n(), 1, 1);
  for (int n = 0; n < x.n(); ++n)
    for (int o = 0; o < weight.n(); ++o) {
      double acc = bias ? (*bias)[o] : 0.0;
      for (std::size_t i = 0; i < in; ++i) acc += static_cast<double>(weight.sample(o)[i]) * x.sample(n)[i];
      y.at(n, o, 0, 0) = static_cast<float>(acc);
    }
  return y;
}

Tensor maxpool2_forward(const Tensor& x) {
  Tensor y(x.n(), x.c(), x.h() / 2, x.w() / 2);
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c)
      for (int oy = 0; oy < y.h(); ++oy)
        for (int ox = 0; ox < y.w(); ++ox) {
          float best = x.at(n, c, 2 * oy, 2 * ox);
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) best = std::max(best, x.at(n, c, 2 * oy + dy, 2 * ox + dx));
          y.at(n, c, oy, ox) = best;
        }
  return y;
}

}  // namespace sst::reference
