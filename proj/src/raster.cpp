#include "sciflow/raster.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

#include "sciflow/errors.hpp"

namespace sciflow {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open '" + path + "'");
  return f;
}

struct PngReader {
  png_structp png = nullptr;
  png_infop info = nullptr;

  PngReader() {
    png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (png) info = png_create_info_struct(png);
    if (!png || !info) throw IoError("libpng allocation failed");
  }
  ~PngReader() { png_destroy_read_struct(&png, &info, nullptr); }
};

struct PngWriter {
  png_structp png = nullptr;
  png_infop info = nullptr;

  PngWriter() {
    png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (png) info = png_create_info_struct(png);
    if (!png || !info) throw IoError("libpng allocation failed");
  }
  ~PngWriter() { png_destroy_write_struct(&png, &info); }
};

void check_signature(std::FILE* f, const std::string& path) {
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, f) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw FormatError("'" + path + "' is not a PNG file");
  }
}

}  // namespace

Raster8 read_png8(const std::string& path) {
  FilePtr f = open_file(path, "rb");
  check_signature(f.get(), path);
  PngReader r;
  if (setjmp(png_jmpbuf(r.png))) {
    throw FormatError("malformed PNG '" + path + "'");
  }
  png_init_io(r.png, f.get());
  png_set_sig_bytes(r.png, 8);
  png_read_info(r.png, r.info);

  png_set_palette_to_rgb(r.png);
  png_set_expand_gray_1_2_4_to_8(r.png);
  if (png_get_valid(r.png, r.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(r.png);
  if (png_get_bit_depth(r.png, r.info) == 16) png_set_strip_16(r.png);
  png_set_strip_alpha(r.png);
  png_read_update_info(r.png, r.info);

  Raster8 img;
  img.width = static_cast<int>(png_get_image_width(r.png, r.info));
  img.height = static_cast<int>(png_get_image_height(r.png, r.info));
  img.channels = static_cast<int>(png_get_channels(r.png, r.info));
  img.pixels.resize(std::size_t(img.width) * img.height * img.channels);

  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y) {
    rows[static_cast<std::size_t>(y)] =
        img.pixels.data() + std::size_t(y) * img.width * img.channels;
  }
  png_read_image(r.png, rows.data());
  png_read_end(r.png, nullptr);
  return img;
}

Raster16 read_png16(const std::string& path) {
  FilePtr f = open_file(path, "rb");
  check_signature(f.get(), path);
  PngReader r;
  if (setjmp(png_jmpbuf(r.png))) {
    throw FormatError("malformed PNG '" + path + "'");
  }
  png_init_io(r.png, f.get());
  png_set_sig_bytes(r.png, 8);
  png_read_info(r.png, r.info);

  const int depth = png_get_bit_depth(r.png, r.info);
  if (depth != 16) {
    throw FormatError("'" + path + "' has bit depth " + std::to_string(depth) +
                      ", expected 16");
  }
  png_set_swap(r.png);  // PNG stores big-endian samples
  png_read_update_info(r.png, r.info);

  Raster16 img;
  img.width = static_cast<int>(png_get_image_width(r.png, r.info));
  img.height = static_cast<int>(png_get_image_height(r.png, r.info));
  img.channels = static_cast<int>(png_get_channels(r.png, r.info));
  img.pixels.resize(std::size_t(img.width) * img.height * img.channels);

  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y) {
    rows[static_cast<std::size_t>(y)] = reinterpret_cast<png_bytep>(
        img.pixels.data() + std::size_t(y) * img.width * img.channels);
  }
  png_read_image(r.png, rows.data());
  png_read_end(r.png, nullptr);
  return img;
}

namespace {

int color_type_for_channels(int channels) {
  switch (channels) {
    case 1: return PNG_COLOR_TYPE_GRAY;
    case 3: return PNG_COLOR_TYPE_RGB;
    default:
      throw ArgumentError("png write: unsupported channel count " +
                          std::to_string(channels));
  }
}

}  // namespace

void write_png8(const std::string& path, const Raster8& img) {
  FilePtr f = open_file(path, "wb");
  PngWriter w;
  if (setjmp(png_jmpbuf(w.png))) {
    throw IoError("png write failed for '" + path + "'");
  }
  png_init_io(w.png, f.get());
  png_set_IHDR(w.png, w.info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8,
               color_type_for_channels(img.channels), PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(w.png, w.info);
  for (int y = 0; y < img.height; ++y) {
    png_write_row(w.png, const_cast<png_bytep>(img.pixels.data() +
                                               std::size_t(y) * img.width *
                                                   img.channels));
  }
  png_write_end(w.png, nullptr);
}

void write_png16(const std::string& path, const Raster16& img) {
  FilePtr f = open_file(path, "wb");
  PngWriter w;
  if (setjmp(png_jmpbuf(w.png))) {
    throw IoError("png write failed for '" + path + "'");
  }
  png_init_io(w.png, f.get());
  png_set_IHDR(w.png, w.info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 16,
               color_type_for_channels(img.channels), PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(w.png, w.info);
  png_set_swap(w.png);  // in-memory samples are native little-endian
  for (int y = 0; y < img.height; ++y) {
    png_write_row(w.png,
                  const_cast<png_bytep>(reinterpret_cast<const png_byte*>(
                      img.pixels.data() + std::size_t(y) * img.width *
                                              img.channels)));
  }
  png_write_end(w.png, nullptr);
}

}  // namespace sciflow
