#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "retina/dataset.hpp"
#include "retina/errors.hpp"
#include "retina/image.hpp"
#include "retina/png_io.hpp"
#include "retina/rng.hpp"

namespace retina::synthetic {

// Fundus-like test image: bright disk with radial falloff and a dark vessel
// streak, on black background, optionally padded with an all-black margin.
inline ImageBuffer fundus_like(int width, int height, std::uint64_t seed, int margin = 0) {
  ImageBuffer img(width, height, 0);
  Rng rng(seed);
  const double cx = width / 2.0 + rng.uniform(-width * 0.03, width * 0.03);
  const double cy = height / 2.0 + rng.uniform(-height * 0.03, height * 0.03);
  const double radius = 0.5 * std::min(width, height) * rng.uniform(0.72, 0.9);
  const double base_r = rng.uniform(140.0, 190.0);
  const double base_g = rng.uniform(60.0, 110.0);
  const double base_b = rng.uniform(30.0, 70.0);
  const double vessel_angle = rng.uniform(0.0, M_PI);

  for (int y = margin; y < height - margin; ++y) {
    for (int x = margin; x < width - margin; ++x) {
      const double dx = x - cx, dy = y - cy;
      const double d = std::sqrt(dx * dx + dy * dy);
      if (d > radius) continue;
      const double falloff = 1.0 - 0.5 * (d / radius) * (d / radius);
      // crude vessel: darken a narrow band through the centre
      const double band = std::abs(dx * std::sin(vessel_angle) - dy * std::cos(vessel_angle));
      const double vessel = band < radius * 0.04 ? 0.55 : 1.0;
      img.at(x, y, 0) = clamp_u8(base_r * falloff * vessel + rng.normal(0.0, 4.0));
      img.at(x, y, 1) = clamp_u8(base_g * falloff * vessel + rng.normal(0.0, 4.0));
      img.at(x, y, 2) = clamp_u8(base_b * falloff * vessel + rng.normal(0.0, 4.0));
    }
  }
  return img;
}

// Disk image whose brightness band encodes the class: separable by mean
// intensity by construction, for desk-scale training runs.
inline ImageBuffer class_disk(int size, int label, int num_classes, std::uint64_t seed) {
  ImageBuffer img(size, size, 0);
  Rng rng(seed);
  const double lo = 50.0, hi = 220.0;
  const double step = (hi - lo) / std::max(1, num_classes - 1);
  const double base = lo + step * label + rng.uniform(-0.18 * step, 0.18 * step);
  const double c = (size - 1) / 2.0;
  const double radius = size * 0.38;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double dx = x - c, dy = y - c;
      if (dx * dx + dy * dy > radius * radius) continue;
      for (int ch = 0; ch < 3; ++ch) {
        img.at(x, y, ch) = clamp_u8(base + rng.normal(0.0, 5.0));
      }
    }
  }
  return img;
}

// A raw grade that regroups onto the given task class.
inline int representative_grade(dataset::TaskKind task, int task_class) {
  switch (task) {
    case dataset::TaskKind::Binary: return task_class == 0 ? 0 : 2;
    case dataset::TaskKind::Three: {
      const int grades[3] = {0, 1, 3};
      return grades[task_class];
    }
    case dataset::TaskKind::Five: return task_class;
  }
  fail(Errc::InvalidTask, "unknown task kind");
}

// Writes <dir>/images/<id>.png for n samples cycling through the task's
// classes (brightness encodes the class), plus <dir>/manifest.csv with raw
// grades chosen so that regrouping recovers the encoded class.
inline std::filesystem::path write_class_disk_dataset(const std::filesystem::path& dir, int n,
                                                      dataset::TaskKind task, int size,
                                                      std::uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  std::ofstream manifest(dir / "manifest.csv");
  if (!manifest) fail(Errc::IoError, "cannot write fixture manifest");
  manifest << "id_code,diagnosis\n";
  const int k = dataset::class_count(task);
  for (int i = 0; i < n; ++i) {
    const int label = i % k;
    const std::string id = "img" + std::to_string(i);
    write_png(dir / "images" / (id + ".png"),
              class_disk(size, label, k, mix_seed(seed, static_cast<std::uint64_t>(i))));
    manifest << id << ',' << representative_grade(task, label) << '\n';
  }
  return dir / "manifest.csv";
}

}  // namespace retina::synthetic
