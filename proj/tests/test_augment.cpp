#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "retina/augment.hpp"
#include "retina/imageops.hpp"
#include "testutil.hpp"

using namespace retina;
using namespace retina::augment;

namespace {

// Independent inverse-mapping rotation oracle: for each destination pixel,
// rotate back by -angle about the centre and bilinearly sample with zero
// outside the frame. Evaluated in doubles from first principles.
double rotate_oracle_at(const ImageBuffer& img, int x, int y, int ch, double degrees) {
  const double theta = degrees * M_PI / 180.0;
  const double c = (img.width - 1) / 2.0;
  const double dx = x - c, dy = y - c;
  const double sx = std::cos(theta) * dx + std::sin(theta) * dy + c;
  const double sy = -std::sin(theta) * dx + std::cos(theta) * dy + c;
  auto tap = [&](int ix, int iy) -> double {
    if (ix < 0 || iy < 0 || ix >= img.width || iy >= img.height) return 0.0;
    return img.at(ix, iy, ch);
  };
  const int x0 = static_cast<int>(std::floor(sx));
  const int y0 = static_cast<int>(std::floor(sy));
  const double wx = sx - x0, wy = sy - y0;
  return (1 - wy) * ((1 - wx) * tap(x0, y0) + wx * tap(x0 + 1, y0)) +
         wy * ((1 - wx) * tap(x0, y0 + 1) + wx * tap(x0 + 1, y0 + 1));
}

}  // namespace

TEST_CASE("rotate") {
  SECTION("angle 0 is the identity") {
    ImageBuffer img = testutil::random_image(16, 16, 2);
    CHECK(rotate(img, 0.0).same_pixels(img));
  }

  SECTION("right angles permute a labelled 2x2 grid") {
    ImageBuffer img(2, 2, 0);
    // distinct values per cell in channel 0
    img.at(0, 0, 0) = 10;
    img.at(1, 0, 0) = 20;
    img.at(0, 1, 0) = 30;
    img.at(1, 1, 0) = 40;
    ImageBuffer out = rotate(img, 90.0);
    // every output pixel must be one of the originals (pure permutation)
    CHECK(out.at(0, 0, 0) + out.at(1, 0, 0) + out.at(0, 1, 0) + out.at(1, 1, 0) == 100);
    // and match the oracle exactly
    for (int y = 0; y < 2; ++y) {
      for (int x = 0; x < 2; ++x) {
        CHECK(static_cast<double>(out.at(x, y, 0)) ==
              Catch::Approx(rotate_oracle_at(img, x, y, 0, 90.0)).margin(0.51));
      }
    }
    // four quarter turns compose to the identity
    ImageBuffer back = rotate(rotate(rotate(out, 90.0), 90.0), 90.0);
    CHECK(back.same_pixels(img));
  }

  SECTION("30 degrees on an impulse matches the inverse-mapping oracle") {
    ImageBuffer img(11, 11, 0);
    for (int c = 0; c < 3; ++c) img.at(5, 5, c) = 255;
    img.at(7, 4, 0) = 99;
    ImageBuffer out = rotate(img, 30.0);
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        CHECK(std::abs(out.at(x, y, 0) - rotate_oracle_at(img, x, y, 0, 30.0)) <= 1.0);
      }
    }
  }

  SECTION("non-square input is rejected") {
    ImageBuffer img(8, 10, 0);
    try {
      rotate(img, 15.0);
      FAIL("expected NonSquareInput");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::NonSquareInput);
    }
  }

  SECTION("rotation keeps the circle mask invariant") {
    // Rotation preserves distance from the centre, so everything beyond the
    // inscribed circle plus the bilinear support stays black.
    ImageBuffer disk = imageops::circle_crop(ImageBuffer(32, 32, 200));
    Rng rng(5);
    const double c = (32 - 1) / 2.0;
    const double guard = 16.0 + 1.5;  // radius + resampling support
    for (int trial = 0; trial < 5; ++trial) {
      ImageBuffer out = rotate(disk, rng.uniform(0.0, 360.0));
      for (int y = 0; y < 32; ++y) {
        for (int x = 0; x < 32; ++x) {
          const double dx = x - c, dy = y - c;
          if (dx * dx + dy * dy > guard * guard) {
            CHECK(static_cast<int>(out.at(x, y, 0)) <= 1);
          }
        }
      }
      for (int ch = 0; ch < 3; ++ch) {
        CHECK(out.at(0, 0, ch) == 0);
        CHECK(out.at(31, 31, ch) == 0);
      }
    }
  }
}

TEST_CASE("reflect") {
  ImageBuffer img = testutil::random_image(13, 13, 8);

  SECTION("per-axis involution") {
    CHECK(reflect(reflect(img, true, false), true, false).same_pixels(img));
    CHECK(reflect(reflect(img, false, true), false, true).same_pixels(img));
  }

  SECTION("both flips equal a half turn") {
    CHECK(reflect(img, true, true).same_pixels(rotate(img, 180.0)));
  }

  SECTION("no flips is the identity") {
    CHECK(reflect(img, false, false).same_pixels(img));
  }
}

TEST_CASE("add_noise") {
  SECTION("sigma 0 is the identity") {
    ImageBuffer img = testutil::random_image(10, 10, 4);
    CHECK(add_noise(img, 0.0, 123).same_pixels(img));
  }

  SECTION("sample statistics match on a large constant image") {
    ImageBuffer img(512, 512, 128);
    ImageBuffer out = add_noise(img, 10.0, 99);
    double sum = 0.0, sq = 0.0;
    for (auto v : out.data) {
      sum += v;
      sq += static_cast<double>(v) * v;
    }
    const double n = static_cast<double>(out.data.size());
    const double mean = sum / n;
    const double stddev = std::sqrt(sq / n - mean * mean);
    CHECK(std::abs(mean - 128.0) < 0.5);
    CHECK(std::abs(stddev - 10.0) < 0.5);
  }

  SECTION("seed determinism") {
    ImageBuffer img = testutil::random_image(20, 20, 6);
    CHECK(add_noise(img, 8.0, 42).same_pixels(add_noise(img, 8.0, 42)));
    CHECK_FALSE(add_noise(img, 8.0, 42).same_pixels(add_noise(img, 8.0, 43)));
  }
}

TEST_CASE("augment composes rotate, reflect, noise under one seed") {
  ImageBuffer img = imageops::circle_crop(testutil::random_image(24, 24, 7));

  SECTION("degenerate config approaches the identity") {
    AugmentConfig cfg;
    cfg.rotation_max = 1e-9;
    cfg.flip_prob = 0.0;
    cfg.noise_sigma = 0.0;
    cfg.seed = 1;
    CHECK(augment::augment(img, cfg).same_pixels(img));
  }

  SECTION("distinct seeds give distinct outputs") {
    AugmentConfig a;
    a.seed = 1;
    AugmentConfig b;
    b.seed = 2;
    ImageBuffer out_a = augment::augment(img, a);
    ImageBuffer out_b = augment::augment(img, b);
    std::size_t diff = 0;
    for (std::size_t i = 0; i < out_a.data.size(); ++i) {
      if (out_a.data[i] != out_b.data[i]) ++diff;
    }
    CHECK(diff > 0);
  }

  SECTION("fixed config is bit-reproducible") {
    AugmentConfig cfg;
    cfg.seed = 31337;
    CHECK(augment::augment(img, cfg).same_pixels(augment::augment(img, cfg)));
  }

  SECTION("dimensions, channels and range are preserved") {
    AugmentConfig cfg;
    cfg.seed = 5;
    ImageBuffer out = augment::augment(img, cfg);
    CHECK(out.width == img.width);
    CHECK(out.height == img.height);
    CHECK(out.channels == 3);
  }

  SECTION("config validation") {
    AugmentConfig bad;
    bad.rotation_max = 0.0;
    CHECK_THROWS_AS(validate(bad), Error);
    bad = AugmentConfig{};
    bad.flip_prob = 1.5;
    CHECK_THROWS_AS(validate(bad), Error);
    bad = AugmentConfig{};
    bad.noise_sigma = -1.0;
    CHECK_THROWS_AS(validate(bad), Error);
  }
}
