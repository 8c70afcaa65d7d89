#pragma once

#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace sst {

// Cache-line aligned storage. Vectorized reductions peel leading elements
// according to the buffer address, so a fixed alignment is what makes
// repeated runs bit-identical.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

using FloatBuffer = std::vector<float, AlignedAllocator<float>>;

// Dense NCHW float tensor. Fully connected activations use h = w = 1.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int n, int c, int h, int w, float fill = 0.0f)
      : n_(n), c_(c), h_(h), w_(w), data_(static_cast<std::size_t>(n) * c * h * w, fill) {}

  int n() const { return n_; }
  int c() const { return c_; }
  int h() const { return h_; }
  int w() const { return w_; }
  std::size_t size() const { return data_.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(h_) * w_; }
  std::size_t sample_size() const { return static_cast<std::size_t>(c_) * h_ * w_; }
  bool same_shape(const Tensor& o) const { return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_; }
  std::string shape_str() const;

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<float> span() { return data_; }
  std::span<const float> span() const { return data_; }
  FloatBuffer& vec() { return data_; }
  const FloatBuffer& vec() const { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }
  float& at(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
  float at(int n, int c, int h, int w) const { return data_[index(n, c, h, w)]; }

  float* sample(int n) { return data_.data() + sample_size() * n; }
  const float* sample(int n) const { return data_.data() + sample_size() * n; }

  void fill(float v);
  // Reinterprets the shape; element count must match.
  void reshape(int n, int c, int h, int w);

 private:
  std::size_t index(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * c_ + c) * h_ + h) * w_ + w;
  }

  int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
  FloatBuffer data_;
};

// Parameter value plus its accumulated gradient.
struct Param {
  Tensor value;
  Tensor grad;
  bool decay = true;  // subject to weight decay
};

}  // namespace sst
