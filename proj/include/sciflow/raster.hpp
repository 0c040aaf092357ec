#pragma once

// 8- and 16-bit interleaved rasters with PNG codec entry points. The PNG
// path is libpng; KITTI flow maps need the 16-bit three-channel form.

#include <cstdint>
#include <string>
#include <vector>

namespace sciflow {

struct Raster8 {
  int width = 0, height = 0, channels = 0;  // interleaved, row-major
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(int y, int x, int c) const {
    return pixels[(std::size_t(y) * width + x) * channels + c];
  }
};

struct Raster16 {
  int width = 0, height = 0, channels = 0;
  std::vector<std::uint16_t> pixels;

  std::uint16_t at(int y, int x, int c) const {
    return pixels[(std::size_t(y) * width + x) * channels + c];
  }
};

// Decodes any viewable PNG into 8-bit gray/RGB (palette expanded, alpha
// stripped, 16-bit depth scaled down).
Raster8 read_png8(const std::string& path);

// Decodes a PNG that must be 16-bit; channel count is preserved.
// Throws FormatError when the file is not a 16-bit PNG.
Raster16 read_png16(const std::string& path);

void write_png8(const std::string& path, const Raster8& img);
void write_png16(const std::string& path, const Raster16& img);

}  // namespace sciflow
