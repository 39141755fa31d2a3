#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace btdnet::data {

struct GrayImage16 {
  int rows = 0;
  int cols = 0;
  std::vector<uint16_t> pixels;
};

/// Reads an 8- or 16-bit grayscale PNG. 8-bit samples are returned unscaled.
/// Throws Error(kCorruptSlice) on decode failure.
GrayImage16 read_png_gray16(const std::filesystem::path& path);

/// Writes a 16-bit grayscale PNG. Throws Error(kIoError).
void write_png_gray16(const std::filesystem::path& path, const GrayImage16& image);

/// Writes an 8-bit RGB PNG; `rgb` is rows*cols*3 bytes.
void write_png_rgb8(const std::filesystem::path& path, int rows, int cols, const std::vector<uint8_t>& rgb);

}  // namespace btdnet::data
