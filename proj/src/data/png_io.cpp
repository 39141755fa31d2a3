#include "btdnet/data/png_io.hpp"

#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <memory>

#include "btdnet/error.hpp"

namespace btdnet::data {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f != nullptr) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void warning_sink(png_structp, png_const_charp) {}

}  // namespace

GrayImage16 read_png_gray16(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw Error(ErrorCode::kCorruptSlice, "cannot open " + path.string());

  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw Error(ErrorCode::kCorruptSlice, "not a PNG: " + path.string());
  }

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, warning_sink);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::kCorruptSlice, "libpng init failed for " + path.string());
  }

  GrayImage16 image;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::kCorruptSlice, "decode failed for " + path.string());
  }

  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color != PNG_COLOR_TYPE_GRAY || (depth != 8 && depth != 16)) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::kCorruptSlice, "expected 8/16-bit grayscale: " + path.string());
  }
  if (depth == 16) png_set_swap(png);  // host order (little-endian) uint16
  png_read_update_info(png, info);

  image.rows = static_cast<int>(png_get_image_height(png, info));
  image.cols = static_cast<int>(png_get_image_width(png, info));
  const size_t stride = png_get_rowbytes(png, info);
  std::vector<png_byte> buffer(stride * image.rows);
  rows.resize(image.rows);
  for (int r = 0; r < image.rows; ++r) rows[r] = buffer.data() + stride * r;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  image.pixels.resize(static_cast<size_t>(image.rows) * image.cols);
  if (depth == 16) {
    for (int r = 0; r < image.rows; ++r) {
      const auto* src = reinterpret_cast<const uint16_t*>(rows[r]);
      std::copy(src, src + image.cols, image.pixels.begin() + static_cast<long>(r) * image.cols);
    }
  } else {
    for (int r = 0; r < image.rows; ++r) {
      for (int c = 0; c < image.cols; ++c) image.pixels[static_cast<size_t>(r) * image.cols + c] = rows[r][c];
    }
  }
  return image;
}

namespace {

void write_png(const std::filesystem::path& path, int rows, int cols, int color, int depth,
               const std::vector<png_bytep>& row_ptrs, bool swap16) {
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw Error(ErrorCode::kIoError, "cannot write " + path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, warning_sink);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::kIoError, "libpng init failed for " + path.string());
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::kIoError, "encode failed for " + path.string());
  }
  png_init_io(png, file.get());
  png_set_compression_level(png, 3);
  png_set_IHDR(png, info, static_cast<png_uint_32>(cols), static_cast<png_uint_32>(rows), depth, color,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (swap16) png_set_swap(png);
  png_write_image(png, const_cast<png_bytepp>(row_ptrs.data()));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png_gray16(const std::filesystem::path& path, const GrayImage16& image) {
  std::vector<png_bytep> rows(image.rows);
  for (int r = 0; r < image.rows; ++r) {
    rows[r] = reinterpret_cast<png_bytep>(const_cast<uint16_t*>(image.pixels.data() + static_cast<size_t>(r) * image.cols));
  }
  write_png(path, image.rows, image.cols, PNG_COLOR_TYPE_GRAY, 16, rows, true);
}

void write_png_rgb8(const std::filesystem::path& path, int rows, int cols, const std::vector<uint8_t>& rgb) {
  std::vector<png_bytep> row_ptrs(rows);
  for (int r = 0; r < rows; ++r) row_ptrs[r] = const_cast<png_bytep>(rgb.data() + static_cast<size_t>(r) * cols * 3);
  write_png(path, rows, cols, PNG_COLOR_TYPE_RGB, 8, row_ptrs, false);
}

}  // namespace btdnet::data
