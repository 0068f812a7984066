#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ucnerf {

// Row-major float image, channels interleaved. Color data lives in [0, 1];
// depth/float maps are unbounded.
struct Image {
  int width = 0, height = 0, channels = 0;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, int c, float fill = 0.0f)
      : width(w), height(h), channels(c),
        data(static_cast<size_t>(w) * h * c, fill) {}

  float& at(int y, int x, int c) {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  float at(int y, int x, int c) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  size_t pixel_count() const { return static_cast<size_t>(width) * height; }
};

// 8-bit RGB PNG. Reading promotes gray/palette/alpha images to RGB.
Image read_png(const std::string& path);
void write_png(const std::string& path, const Image& img);

// Single-channel PFM ("Pf"), little-endian float32, bottom-up scanlines.
Image read_pfm(const std::string& path);
void write_pfm(const std::string& path, const Image& img);

// ITU-R BT.601 luma from an RGB image.
std::vector<float> luma(const Image& img);

}  // namespace ucnerf
