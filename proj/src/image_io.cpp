#include "sst/image_io.hpp"

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <vector>

// jpeglib.h needs FILE and size_t declared first.
#include <jpeglib.h>

#include "sst/errors.hpp"

namespace sst {

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IOError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct PngReadState {
  const std::vector<unsigned char>* data;
  std::size_t offset = 0;
};

void png_read_from_memory(png_structp png, png_bytep out, png_size_t len) {
  auto* st = static_cast<PngReadState*>(png_get_io_ptr(png));
  if (st->offset + len > st->data->size()) png_error(png, "unexpected end of data");
  std::memcpy(out, st->data->data() + st->offset, len);
  st->offset += len;
}

void png_error_to_longjmp(png_structp png, png_const_charp) { longjmp(png_jmpbuf(png), 1); }
void png_ignore_warning(png_structp, png_const_charp) {}

Image decode_png(const std::vector<unsigned char>& data, const std::string& name) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_to_longjmp,
                                           png_ignore_warning);
  if (!png) throw DecodeError("png: out of memory");
  png_infop info = png_create_info_struct(png);
  PngReadState st{&data, 0};
  std::vector<png_bytep> rows;
  std::vector<unsigned char> buf;
  int width = 0, height = 0, channels = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DecodeError("corrupt or truncated PNG: " + name);
  }
  png_set_read_fn(png, &st, png_read_from_memory);
  png_read_info(png, info);
  width = static_cast<int>(png_get_image_width(png, info));
  height = static_cast<int>(png_get_image_height(png, info));
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  channels = png_get_channels(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buf.resize(rowbytes * height);
  rows.resize(height);
  for (int r = 0; r < height; ++r) rows[r] = buf.data() + rowbytes * r;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  std::vector<std::uint8_t> px(static_cast<std::size_t>(width) * height * channels);
  for (int r = 0; r < height; ++r)
    std::memcpy(px.data() + static_cast<std::size_t>(r) * width * channels, rows[r],
                static_cast<std::size_t>(width) * channels);
  return Image(Shape3{height, width, channels}, std::move(px));
}

struct JpegErrorMgr {
  jpeg_error_mgr base;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  std::longjmp(err->jump, 1);
}

// libjpeg silently pads truncated streams with gray; treat that as corruption.
void jpeg_emit_message(j_common_ptr cinfo, int level) {
  if (level < 0) {
    auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    std::longjmp(err->jump, 1);
  }
}

Image decode_jpeg(const std::vector<unsigned char>& data, const std::string& name) {
  jpeg_decompress_struct cinfo{};
  JpegErrorMgr err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  err.base.emit_message = jpeg_emit_message;
  std::vector<std::uint8_t> px;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw DecodeError("corrupt or truncated JPEG: " + name);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, data.data(), static_cast<unsigned long>(data.size()));
  jpeg_read_header(&cinfo, TRUE);
  if (cinfo.jpeg_color_space != JCS_GRAYSCALE) cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  const int w = static_cast<int>(cinfo.output_width);
  const int h = static_cast<int>(cinfo.output_height);
  const int c = cinfo.output_components;
  px.resize(static_cast<std::size_t>(w) * h * c);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = px.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * c;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return Image(Shape3{h, w, c}, std::move(px));
}

Image convert_channels(const Image& img, int channels) {
  if (img.channels() == channels) return img;
  Image out(img.height(), img.width(), channels);
  if (channels == 3) {
    for (int r = 0; r < img.height(); ++r)
      for (int c = 0; c < img.width(); ++c)
        for (int k = 0; k < 3; ++k) out.at(r, c, k) = img.at(r, c, 0);
  } else {
    const auto gray = to_gray(img);
    for (std::size_t i = 0; i < gray.size(); ++i)
      out.pixels()[i] = static_cast<std::uint8_t>(std::lround(gray[i] * 255.0));
  }
  return out;
}

}  // namespace

Image load_image(const std::filesystem::path& path) {
  const auto data = read_file(path);
  static const unsigned char kPngSig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  if (data.size() >= 8 && std::memcmp(data.data(), kPngSig, 8) == 0) return decode_png(data, path.string());
  if (data.size() >= 3 && data[0] == 0xFF && data[1] == 0xD8 && data[2] == 0xFF)
    return decode_jpeg(data, path.string());
  throw DecodeError("unrecognized image format: " + path.string());
}

Image load_image(const std::filesystem::path& path, const Shape3& expected, ResizePolicy policy) {
  Image img = convert_channels(load_image(path), expected.channels);
  if (img.height() == expected.height && img.width() == expected.width) return img;
  if (policy == ResizePolicy::kReject)
    throw ShapeError(path.string() + ": size " + img.shape().str() + " != expected " + expected.str());
  return resize_center_crop(img, expected.height, expected.width);
}

void save_png(const Image& img, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw IOError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_to_longjmp,
                                            png_ignore_warning);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IOError("png encode failed: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.width(), img.height(), 8,
               img.channels() == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(img.width()) * img.channels();
  for (int r = 0; r < img.height(); ++r) {
    auto row = const_cast<png_bytep>(img.pixels().data() + stride * r);
    png_write_row(png, row);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace sst
