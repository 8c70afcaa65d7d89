#pragma once

#include <cstdint>
#include <vector>

#include "sst/tensor.hpp"

// Compute kernels used by the layers. Two implementations share one
// signature set: `kernels::` is the OpenMP/GEMM path used in training and
// inference, `reference::` is a direct serial loop nest kept as a test oracle
// and as the benchmark baseline.
namespace sst {

struct ConvGeometry {
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  int out_size(int in) const { return (in + 2 * pad - kernel) / stride + 1; }
  // Output size of the transposed convolution with this geometry.
  int transposed_out_size(int in) const { return (in - 1) * stride - 2 * pad + kernel; }
};

namespace kernels {

// y[n,o] = sum_i w[o,i] (*) x[n,i] + b[o]; weight is [Cout, Cin, k, k].
Tensor conv2d_forward(const Tensor& x, const Tensor& weight, const Tensor* bias, const ConvGeometry& g);
// Gradient w.r.t. the input; `in_h`/`in_w` disambiguate strided shapes.
Tensor conv2d_backward_data(const Tensor& dy, const Tensor& weight, int in_h, int in_w, const ConvGeometry& g);
// Accumulates into dweight (and dbias when non-null).
void conv2d_backward_weight(const Tensor& x, const Tensor& dy, Tensor& dweight, Tensor* dbias,
                            const ConvGeometry& g);

// y = x * W^T + b with x viewed as [N, features]; weight is [out, in, 1, 1].
Tensor linear_forward(const Tensor& x, const Tensor& weight, const Tensor* bias);
Tensor linear_backward_data(const Tensor& dy, const Tensor& weight, const Tensor& x_shape_like);
void linear_backward_weight(const Tensor& x, const Tensor& dy, Tensor& dweight, Tensor* dbias);

// 2x2/stride-2 max pooling; `argmax` receives flat input indices.
Tensor maxpool2_forward(const Tensor& x, std::vector<std::uint32_t>& argmax);
Tensor maxpool2_backward(const Tensor& dy, const std::vector<std::uint32_t>& argmax, const Tensor& x_shape_like);

}  // namespace kernels

namespace reference {

Tensor conv2d_forward(const Tensor& x, const Tensor& weight, const Tensor* bias, const ConvGeometry& g);
Tensor conv2d_backward_data(const Tensor& dy, const Tensor& weight, int in_h, int in_w, const ConvGeometry& g);
void conv2d_backward_weight(const Tensor& x, const Tensor& dy, Tensor& dweight, Tensor* dbias,
                            const ConvGeometry& g);
Tensor linear_forward(const Tensor& x, const Tensor& weight, const Tensor* bias);
Tensor maxpool2_forward(const Tensor& x);

}  // namespace reference

}  // namespace sst
