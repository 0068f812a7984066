#include "ucnerf/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <stdexcept>

namespace ucnerf {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

bool host_is_little_endian() {
  const uint32_t v = 1;
  uint8_t b;
  std::memcpy(&b, &v, 1);
  return b == 1;
}

}  // namespace

Image read_png(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("read_png: cannot open " + path);
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png: failed on " + path);
  }
  png_init_io(png, f.get());
  png_read_info(png, info);

  png_set_expand(png);  // palette/gray/low-depth -> 8-bit
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  const int w = png_get_image_width(png, info);
  const int h = png_get_image_height(png, info);
  if (png_get_channels(png, info) != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png: unexpected channel count in " + path);
  }
  std::vector<uint8_t> raw(static_cast<size_t>(w) * h * 3);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y) rows[y] = raw.data() + static_cast<size_t>(y) * w * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image img(w, h, 3);
  for (size_t i = 0; i < raw.size(); ++i) img.data[i] = raw[i] / 255.0f;
  return img;
}

void write_png(const std::string& path, const Image& img) {
  if (img.channels != 3)
    throw std::invalid_argument("write_png: need a 3-channel image");
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("write_png: cannot open " + path);
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_png: failed on " + path);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<uint8_t> row(static_cast<size_t>(img.width) * 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width * 3; ++x) {
      const float v = img.data[static_cast<size_t>(y) * img.width * 3 + x];
      const float c = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
      row[x] = static_cast<uint8_t>(std::lround(c * 255.0f));
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_pfm(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("read_pfm: cannot open " + path);
  char tag[3] = {0, 0, 0};
  int w = 0, h = 0;
  double scale = 0.0;
  if (std::fscanf(f.get(), "%2s %d %d %lf", tag, &w, &h, &scale) != 4 ||
      std::strcmp(tag, "Pf") != 0 || w <= 0 || h <= 0 || scale == 0.0)
    throw std::runtime_error("read_pfm: bad header in " + path);
  if (std::fgetc(f.get()) != '\n')
    throw std::runtime_error("read_pfm: bad header terminator in " + path);
  if (scale > 0.0)
    throw std::runtime_error("read_pfm: big-endian data unsupported in " + path);
  if (!host_is_little_endian())
    throw std::runtime_error("read_pfm: little-endian host required");

  Image img(w, h, 1);
  // scanlines are stored bottom-up
  for (int y = h - 1; y >= 0; --y)
    if (std::fread(img.data.data() + static_cast<size_t>(y) * w, sizeof(float),
                   w, f.get()) != static_cast<size_t>(w))
      throw std::runtime_error("read_pfm: truncated data in " + path);
  return img;
}

void write_pfm(const std::string& path, const Image& img) {
  if (img.channels != 1)
    throw std::invalid_argument("write_pfm: need a 1-channel image");
  if (!host_is_little_endian())
    throw std::runtime_error("write_pfm: little-endian host required");
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("write_pfm: cannot open " + path);
  std::fprintf(f.get(), "Pf\n%d %d\n-1.0\n", img.width, img.height);
  for (int y = img.height - 1; y >= 0; --y)
    if (std::fwrite(img.data.data() + static_cast<size_t>(y) * img.width,
                    sizeof(float), img.width, f.get()) !=
        static_cast<size_t>(img.width))
      throw std::runtime_error("write_pfm: short write to " + path);
}

std::vector<float> luma(const Image& img) {
  if (img.channels != 3)
    throw std::invalid_argument("luma: need a 3-channel image");
  std::vector<float> out(img.pixel_count());
  for (size_t i = 0; i < out.size(); ++i) {
    const float* p = img.data.data() + i * 3;
    out[i] = 0.299f * p[0] + 0.587f * p[1] + 0.114f * p[2];
  }
  return out;
}

}  // namespace ucnerf
