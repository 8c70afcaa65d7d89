#pragma once

#include <filesystem>
#include <optional>

#include "sst/image.hpp"

namespace sst {

enum class ResizePolicy { kReject, kResizeCenterCrop };

// Decodes a PNG or JPEG file (detected from its signature). Grayscale files
// are expanded to three channels when `expected.channels == 3`, and RGB files
// are reduced to luminance when it is 1. Alpha channels are dropped.
Image load_image(const std::filesystem::path& path, const Shape3& expected,
                 ResizePolicy policy = ResizePolicy::kResizeCenterCrop);

// Decodes without any shape adjustment.
Image load_image(const std::filesystem::path& path);

// Lossless 8-bit PNG.
void save_png(const Image& img, const std::filesystem::path& path);

}  // namespace sst
