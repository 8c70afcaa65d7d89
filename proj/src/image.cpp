#include "sst/image.hpp"

#include <algorithm>
#include <cmath>

#include "sst/errors.hpp"

namespace sst {

std::string Shape3::str() const {
  return std::to_string(height) + "x" + std::to_string(width) + "x" + std::to_string(channels);
}

namespace {

void check_shape(const Shape3& s) {
  if (s.height <= 0 || s.width <= 0 || (s.channels != 1 && s.channels != 3)) {
    throw ShapeError("invalid image shape " + s.str());
  }
}

}  // namespace

Image::Image(int height, int width, int channels, std::uint8_t fill)
    : shape_{height, width, channels} {
  check_shape(shape_);
  pixels_.assign(shape_.size(), fill);
}

Image::Image(Shape3 shape, std::vector<std::uint8_t> pixels)
    : shape_(shape), pixels_(std::move(pixels)) {
  check_shape(shape_);
  if (pixels_.size() != shape_.size()) throw ShapeError("pixel buffer does not match " + shape_.str());
}

FloatImage Image::to_compute() const {
  std::vector<float> v(pixels_.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(pixels_[i]) / 255.0f;
  return FloatImage(shape_, std::move(v));
}

FloatImage::FloatImage(int height, int width, int channels, float fill)
    : shape_{height, width, channels} {
  check_shape(shape_);
  values_.assign(shape_.size(), fill);
}

FloatImage::FloatImage(Shape3 shape, std::vector<float> values)
    : shape_(shape), values_(std::move(values)) {
  check_shape(shape_);
  if (values_.size() != shape_.size()) throw ShapeError("value buffer does not match " + shape_.str());
}

Image FloatImage::to_storage() const {
  std::vector<std::uint8_t> p(values_.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const float v = std::clamp(values_[i], 0.0f, 1.0f);
    p[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  return Image(shape_, std::move(p));
}

std::vector<double> to_gray(const Image& img) {
  const int h = img.height(), w = img.width();
  std::vector<double> g(static_cast<std::size_t>(h) * w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double v;
      if (img.channels() == 1) {
        v = img.at(r, c, 0);
      } else {
        v = 0.299 * img.at(r, c, 0) + 0.587 * img.at(r, c, 1) + 0.114 * img.at(r, c, 2);
      }
      g[static_cast<std::size_t>(r) * w + c] = v / 255.0;
    }
  }
  return g;
}

FloatImage resize_bilinear(const FloatImage& src, int height, int width) {
  if (height <= 0 || width <= 0) throw ShapeError("resize target must be positive");
  if (src.height() == height && src.width() == width) return src;
  FloatImage dst(height, width, src.channels());
  const double sy = static_cast<double>(src.height()) / height;
  const double sx = static_cast<double>(src.width()) / width;
  for (int r = 0; r < height; ++r) {
    const double fy = std::clamp((r + 0.5) * sy - 0.5, 0.0, src.height() - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, src.height() - 1);
    const double wy = fy - y0;
    for (int c = 0; c < width; ++c) {
      const double fx = std::clamp((c + 0.5) * sx - 0.5, 0.0, src.width() - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, src.width() - 1);
      const double wx = fx - x0;
      for (int ch = 0; ch < src.channels(); ++ch) {
        const double top = (1 - wx) * src.at(y0, x0, ch) + wx * src.at(y0, x1, ch);
        const double bot = (1 - wx) * src.at(y1, x0, ch) + wx * src.at(y1, x1, ch);
        dst.at(r, c, ch) = static_cast<float>((1 - wy) * top + wy * bot);
      }
    }
  }
  return dst;
}

Image resize_bilinear(const Image& src, int height, int width) {
  if (src.height() == height && src.width() == width) return src;
  return resize_bilinear(src.to_compute(), height, width).to_storage();
}

Image resize_center_crop(const Image& src, int height, int width) {
  const double scale = std::max(static_cast<double>(height) / src.height(),
                                static_cast<double>(width) / src.width());
  const int rh = std::max(height, static_cast<int>(std::lround(src.height() * scale)));
  const int rw = std::max(width, static_cast<int>(std::lround(src.width() * scale)));
  const Image resized = resize_bilinear(src, rh, rw);
  const int top = (rh - height) / 2, left = (rw - width) / 2;
  Image out(height, width, src.channels());
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c)
      for (int ch = 0; ch < src.channels(); ++ch) out.at(r, c, ch) = resized.at(r + top, c + left, ch);
  return out;
}

}  // namespace sst
