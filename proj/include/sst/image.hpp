#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace sst {

struct Shape3 {
  int height = 0;
  int width = 0;
  int channels = 0;

  std::size_t size() const { return static_cast<std::size_t>(height) * width * channels; }
  bool operator==(const Shape3&) const = default;
  std::string str() const;
};

class FloatImage;

// Storage-form image: interleaved HWC, 8 bits per sample. Channels is 1 or 3.
class Image {
 public:
  Image() = default;
  Image(int height, int width, int channels, std::uint8_t fill = 0);
  Image(Shape3 shape, std::vector<std::uint8_t> pixels);

  int height() const { return shape_.height; }
  int width() const { return shape_.width; }
  int channels() const { return shape_.channels; }
  const Shape3& shape() const { return shape_; }
  bool empty() const { return pixels_.empty(); }

  std::uint8_t& at(int row, int col, int ch) {
    return pixels_[(static_cast<std::size_t>(row) * shape_.width + col) * shape_.channels + ch];
  }
  std::uint8_t at(int row, int col, int ch) const {
    return pixels_[(static_cast<std::size_t>(row) * shape_.width + col) * shape_.channels + ch];
  }

  std::span<std::uint8_t> pixels() { return pixels_; }
  std::span<const std::uint8_t> pixels() const { return pixels_; }

  FloatImage to_compute() const;

  bool operator==(const Image& other) const = default;

 private:
  Shape3 shape_{};
  std::vector<std::uint8_t> pixels_;
};

// Compute-form image: same layout as Image, values in [0, 1].
class FloatImage {
 public:
  FloatImage() = default;
  FloatImage(int height, int width, int channels, float fill = 0.0f);
  FloatImage(Shape3 shape, std::vector<float> values);

  int height() const { return shape_.height; }
  int width() const { return shape_.width; }
  int channels() const { return shape_.channels; }
  const Shape3& shape() const { return shape_; }

  float& at(int row, int col, int ch) {
    return values_[(static_cast<std::size_t>(row) * shape_.width + col) * shape_.channels + ch];
  }
  float at(int row, int col, int ch) const {
    return values_[(static_cast<std::size_t>(row) * shape_.width + col) * shape_.channels + ch];
  }

  std::span<float> values() { return values_; }
  std::span<const float> values() const { return values_; }

  // Clamps to [0,1] and rounds to the nearest 8-bit level.
  Image to_storage() const;

 private:
  Shape3 shape_{};
  std::vector<float> values_;
};

// Luminance (0.299, 0.587, 0.114) on the [0,1] scale, row-major H*W.
std::vector<double> to_gray(const Image& img);

// Bilinear resampling with half-pixel centers and edge clamping.
FloatImage resize_bilinear(const FloatImage& src, int height, int width);
Image resize_bilinear(const Image& src, int height, int width);

// Resize so the shorter side matches, then take the centered crop.
Image resize_center_crop(const Image& src, int height, int width);

}  // namespace sst
