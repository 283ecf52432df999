#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "retina/errors.hpp"

namespace retina {

// 8-bit RGB raster, row-major interleaved.
struct ImageBuffer {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<std::uint8_t> data;

  // Set by crop_black_border when the input had no content above threshold.
  bool no_content = false;

  ImageBuffer() = default;
  ImageBuffer(int w, int h, std::uint8_t fill_value = 0)
      : width(w), height(h), channels(3),
        data(static_cast<std::size_t>(w) * h * 3, fill_value) {}

  bool empty() const { return width == 0 || height == 0; }
  std::size_t size() const { return data.size(); }

  std::uint8_t& at(int x, int y, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int x, int y, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  bool same_pixels(const ImageBuffer& other) const {
    return width == other.width && height == other.height &&
           channels == other.channels && data == other.data;
  }
};

// Round half up after clamping to the intensity range.
inline std::uint8_t clamp_u8(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
}

}  // namespace retina
