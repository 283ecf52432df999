#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "retina/errors.hpp"
#include "retina/image.hpp"

namespace retina::imageops {

struct PreprocessConfig {
  int target_size = 512;        // 224, 299 or 512
  int black_threshold = 7;      // border crop sensitivity; 0 keeps only exact black
  double blend_alpha = 4.0;
  int blend_bias = 128;
  double sigma_ratio = 1.0 / 30.0;  // blur sigma = sigma_ratio * image width

  double sigma_for(int width) const { return sigma_ratio * width; }
};

inline void validate(const PreprocessConfig& cfg) {
  if (cfg.target_size != 224 && cfg.target_size != 299 && cfg.target_size != 512) {
    fail(Errc::ConfigError, "preprocess.target_size must be 224, 299 or 512");
  }
  if (cfg.black_threshold < 0 || cfg.black_threshold > 255) {
    fail(Errc::ConfigError, "preprocess.black_threshold must lie in 0..255");
  }
  if (!(cfg.blend_alpha > 0.0)) fail(Errc::ConfigError, "preprocess.blend_alpha must be > 0");
  if (!(cfg.sigma_ratio > 0.0)) fail(Errc::ConfigError, "preprocess.sigma_ratio must be > 0");
  if (cfg.blend_bias < 0 || cfg.blend_bias > 255) {
    fail(Errc::ConfigError, "preprocess.blend_bias must lie in 0..255");
  }
}

// Tight bounding box of rows/columns whose max channel intensity exceeds
// threshold. An input with no such pixel comes back unchanged with the
// no_content flag raised.
inline ImageBuffer crop_black_border(const ImageBuffer& img, int threshold) {
  int x0 = img.width, x1 = -1, y0 = img.height, y1 = -1;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      int m = std::max({img.at(x, y, 0), img.at(x, y, 1), img.at(x, y, 2)});
      if (m > threshold) {
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
      }
    }
  }
  if (x1 < 0) {
    ImageBuffer out = img;
    out.no_content = true;
    return out;
  }
  ImageBuffer out(x1 - x0 + 1, y1 - y0 + 1);
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      for (int c = 0; c < 3; ++c) out.at(x - x0, y - y0, c) = img.at(x, y, c);
    }
  }
  return out;
}

// Normalized Gaussian taps at integer offsets, radius ceil(3*sigma).
inline std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) fail(Errc::InvalidSigma, "sigma must be > 0");
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    double v = std::exp(-0.5 * (static_cast<double>(i) * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    sum += v;
  }
  for (double& v : k) v /= sum;
  return k;
}

namespace detail {

// Separable blur with edge-clamp padding, computed in doubles. Channel-major
// planes so both passes stream contiguously enough.
inline std::vector<double> blur_planes(const ImageBuffer& img, double sigma) {
  const auto kernel = gaussian_kernel(sigma);
  const int radius = static_cast<int>(kernel.size() / 2);
  const int w = img.width, h = img.height;
  const std::size_t plane = static_cast<std::size_t>(w) * h;

  std::vector<double> tmp(plane * 3), out(plane * 3);

  // horizontal
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          int xs = std::clamp(x + i, 0, w - 1);
          acc += kernel[static_cast<std::size_t>(i + radius)] * img.at(xs, y, c);
        }
        tmp[static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(y) * w + x] = acc;
      }
    }
  }
  // vertical
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          int ys = std::clamp(y + i, 0, h - 1);
          acc += kernel[static_cast<std::size_t>(i + radius)] *
                 tmp[static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(ys) * w + x];
        }
        out[static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(y) * w + x] = acc;
      }
    }
  }
  return out;
}

}  // namespace detail

inline ImageBuffer gaussian_blur(const ImageBuffer& img, double sigma) {
  auto planes = detail::blur_planes(img, sigma);
  const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
  ImageBuffer out(img.width, img.height);
  for (int c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      out.data[i * 3 + static_cast<std::size_t>(c)] =
          clamp_u8(planes[static_cast<std::size_t>(c) * plane + i]);
    }
  }
  return out;
}

// out = clamp(alpha*I - alpha*G_sigma(I) + bias). Flattens illumination and
// sharpens vessel/lesion contrast around the bias level.
inline ImageBuffer gaussian_blend(const ImageBuffer& img, double alpha, double sigma, int bias) {
  auto blurred = detail::blur_planes(img, sigma);
  const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
  ImageBuffer out(img.width, img.height);
  for (int c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      double orig = img.data[i * 3 + static_cast<std::size_t>(c)];
      double blur = blurred[static_cast<std::size_t>(c) * plane + i];
      out.data[i * 3 + static_cast<std::size_t>(c)] =
          clamp_u8(alpha * orig - alpha * blur + bias);
    }
  }
  return out;
}

// Zeroes everything outside the inscribed circle centred on the image.
inline ImageBuffer circle_crop(const ImageBuffer& img) {
  ImageBuffer out = img;
  const double cx = (img.width - 1) / 2.0;
  const double cy = (img.height - 1) / 2.0;
  const double radius = std::min(img.width, img.height) / 2.0;
  const double r2 = radius * radius;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double dx = x - cx, dy = y - cy;
      if (dx * dx + dy * dy > r2) {
        for (int c = 0; c < 3; ++c) out.at(x, y, c) = 0;
      }
    }
  }
  return out;
}

// Bilinear resize to size x size with half-pixel centre alignment.
inline ImageBuffer resize(const ImageBuffer& img, int size) {
  if (size < 8) fail(Errc::InvalidSize, "resize target must be >= 8");
  if (img.empty()) fail(Errc::InvalidSize, "cannot resize an empty image");
  if (img.width == size && img.height == size) return img;

  ImageBuffer out(size, size);
  const double sx = static_cast<double>(img.width) / size;
  const double sy = static_cast<double>(img.height) / size;
  for (int y = 0; y < size; ++y) {
    double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.height - 1));
    int y0 = static_cast<int>(std::floor(fy));
    int y1 = std::min(y0 + 1, img.height - 1);
    double wy = fy - y0;
    for (int x = 0; x < size; ++x) {
      double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.width - 1));
      int x0 = static_cast<int>(std::floor(fx));
      int x1 = std::min(x0 + 1, img.width - 1);
      double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        double v = (1 - wy) * ((1 - wx) * img.at(x0, y0, c) + wx * img.at(x1, y0, c)) +
                   wy * ((1 - wx) * img.at(x0, y1, c) + wx * img.at(x1, y1, c));
        out.at(x, y, c) = clamp_u8(v);
      }
    }
  }
  return out;
}

// Canonical order: border crop -> resize -> brightness blend -> circle crop.
inline ImageBuffer preprocess(const ImageBuffer& img, const PreprocessConfig& cfg) {
  validate(cfg);
  ImageBuffer step = crop_black_border(img, cfg.black_threshold);
  const bool no_content = step.no_content;
  step = resize(step, cfg.target_size);
  step = gaussian_blend(step, cfg.blend_alpha, cfg.sigma_for(cfg.target_size), cfg.blend_bias);
  step = circle_crop(step);
  step.no_content = no_content;
  return step;
}

}  // namespace retina::imageops
