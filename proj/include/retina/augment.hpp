#pragma once

#include <cmath>
#include <cstdint>

#include "retina/errors.hpp"
#include "retina/image.hpp"
#include "retina/rng.hpp"

namespace retina::augment {

struct AugmentConfig {
  double rotation_max = 360.0;  // degrees, angle drawn uniformly from [0, rotation_max)
  double flip_prob = 0.5;       // per axis
  double noise_sigma = 10.0;    // additive Gaussian, intensity units
  std::uint64_t seed = 0;
};

inline void validate(const AugmentConfig& cfg) {
  if (!(cfg.rotation_max > 0.0 && cfg.rotation_max <= 360.0)) {
    fail(Errc::ConfigError, "augment.rotation_max must lie in (0, 360]");
  }
  if (cfg.flip_prob < 0.0 || cfg.flip_prob > 1.0) {
    fail(Errc::ConfigError, "augment.flip_prob must lie in [0, 1]");
  }
  if (cfg.noise_sigma < 0.0) fail(Errc::ConfigError, "augment.noise_sigma must be >= 0");
}

// Rotation about the image centre (counter-clockwise in pixel coordinates),
// bilinear resampling via inverse mapping, zero fill outside the frame.
// Runs after circle cropping, so requires square input.
inline ImageBuffer rotate(const ImageBuffer& img, double degrees) {
  if (img.width != img.height) {
    fail(Errc::NonSquareInput, "rotate expects a square image");
  }
  const double theta = degrees * M_PI / 180.0;
  const double cos_t = std::cos(theta);
  const double sin_t = std::sin(theta);
  const double c = (img.width - 1) / 2.0;

  ImageBuffer out(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      // inverse rotation of the destination pixel
      const double dx = x - c, dy = y - c;
      const double sxf = cos_t * dx + sin_t * dy + c;
      const double syf = -sin_t * dx + cos_t * dy + c;
      if (sxf < -0.5 || syf < -0.5 || sxf > img.width - 0.5 || syf > img.height - 0.5) {
        continue;  // stays zero
      }
      const int x0 = static_cast<int>(std::floor(sxf));
      const int y0 = static_cast<int>(std::floor(syf));
      const double wx = sxf - x0;
      const double wy = syf - y0;
      auto sample = [&](int sx, int sy, int ch) -> double {
        if (sx < 0 || sy < 0 || sx >= img.width || sy >= img.height) return 0.0;
        return img.at(sx, sy, ch);
      };
      for (int ch = 0; ch < 3; ++ch) {
        double v = (1 - wy) * ((1 - wx) * sample(x0, y0, ch) + wx * sample(x0 + 1, y0, ch)) +
                   wy * ((1 - wx) * sample(x0, y0 + 1, ch) + wx * sample(x0 + 1, y0 + 1, ch));
        out.at(x, y, ch) = clamp_u8(v);
      }
    }
  }
  return out;
}

inline ImageBuffer reflect(const ImageBuffer& img, bool horizontal, bool vertical) {
  if (!horizontal && !vertical) return img;
  ImageBuffer out(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    const int sy = vertical ? img.height - 1 - y : y;
    for (int x = 0; x < img.width; ++x) {
      const int sx = horizontal ? img.width - 1 - x : x;
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = img.at(sx, sy, c);
    }
  }
  return out;
}

// i.i.d. zero-mean Gaussian noise per channel, clamped to the intensity range.
inline ImageBuffer add_noise(const ImageBuffer& img, double sigma, std::uint64_t seed) {
  if (sigma < 0.0) fail(Errc::ConfigError, "noise sigma must be >= 0");
  if (sigma == 0.0) return img;
  ImageBuffer out = img;
  Rng rng(seed);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = clamp_u8(static_cast<double>(out.data[i]) + rng.normal(0.0, sigma));
  }
  return out;
}

// rotate -> reflect -> noise, all draws taken from cfg.seed in a fixed order.
inline ImageBuffer augment(const ImageBuffer& img, const AugmentConfig& cfg) {
  validate(cfg);
  Rng rng(cfg.seed);
  const double angle = rng.uniform(0.0, cfg.rotation_max);
  const bool flip_h = rng.uniform() < cfg.flip_prob;
  const bool flip_v = rng.uniform() < cfg.flip_prob;
  const std::uint64_t noise_seed = rng.next_u64();

  ImageBuffer out = rotate(img, angle);
  out = reflect(out, flip_h, flip_v);
  if (cfg.noise_sigma > 0.0) out = add_noise(out, cfg.noise_sigma, noise_seed);
  return out;
}

}  // namespace retina::augment
