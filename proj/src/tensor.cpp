#include "sst/tensor.hpp"

#include <algorithm>

#include "sst/errors.hpp"

namespace sst {

std::string Tensor::shape_str() const {
  return "[" + std::to_string(n_) + "," + std::to_string(c_) + "," + std::to_string(h_) + "," +
         std::to_string(w_) + "]";
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::reshape(int n, int c, int h, int w) {
  if (static_cast<std::size_t>(n) * c * h * w != data_.size())
    throw ShapeError("cannot reshape " + shape_str() + " to " + std::to_string(n) + "x" + std::to_string(c) + "x" +
                     std::to_string(h) + "x" + std::to_string(w));
  n_ = n;
  c_ = c;
  h_ = h;
  w_ = w;
}

}  // namespace sst
