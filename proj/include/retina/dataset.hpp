#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "retina/errors.hpp"
#include "retina/rng.hpp"

namespace retina::dataset {

// Grades run 0 (no DR) through 4 (proliferate DR).
constexpr int kMinGrade = 0;
constexpr int kMaxGrade = 4;

enum class TaskKind { Binary, Three, Five };

inline int class_count(TaskKind task) {
  switch (task) {
    case TaskKind::Binary: return 2;
    case TaskKind::Three: return 3;
    case TaskKind::Five: return 5;
  }
  fail(Errc::InvalidTask, "unknown task kind");
}

inline const char* task_name(TaskKind task) {
  switch (task) {
    case TaskKind::Binary: return "binary";
    case TaskKind::Three: return "three";
    case TaskKind::Five: return "five";
  }
  return "?";
}

inline TaskKind task_from_name(const std::string& name) {
  if (name == "binary") return TaskKind::Binary;
  if (name == "three") return TaskKind::Three;
  if (name == "five") return TaskKind::Five;
  fail(Errc::ConfigError, "unknown task '" + name + "' (expected binary|three|five)");
}

struct ImageRecord {
  std::string id;
  std::string image_path;
  int grade = 0;            // 0..4 diagnosis grade
  int task_label = -1;      // assigned by regroup_labels; -1 = unset
  bool synthetic = false;   // true iff created by oversampling
  std::uint64_t aug_seed = 0;  // pixel-generation seed for synthetic records

  bool has_task_label() const { return task_label >= 0; }
};

struct Manifest {
  std::vector<ImageRecord> records;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
};

struct DatasetSplits {
  std::vector<ImageRecord> train;
  std::vector<ImageRecord> val;
  std::vector<ImageRecord> test;
  std::uint64_t seed = 0;
};

struct ClassDistribution {
  std::vector<long long> counts;

  long long total() const { return std::accumulate(counts.begin(), counts.end(), 0LL); }
  long long max() const { return counts.empty() ? 0 : *std::max_element(counts.begin(), counts.end()); }
  long long min() const { return counts.empty() ? 0 : *std::min_element(counts.begin(), counts.end()); }
};

namespace detail {

inline std::string strip_cr(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.pop_back();
  return s;
}

// Splits a simple (unquoted) CSV line.
inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

inline std::optional<long long> parse_int(const std::string& s) {
  if (s.empty()) return std::nullopt;
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &pos);
  } catch (...) {
    return std::nullopt;
  }
  if (pos != s.size()) return std::nullopt;
  return v;
}

inline std::optional<std::uint64_t> parse_u64(const std::string& s) {
  if (s.empty() || s.front() == '-') return std::nullopt;
  std::size_t pos = 0;
  std::uint64_t v = 0;
  try {
    v = std::stoull(s, &pos);
  } catch (...) {
    return std::nullopt;
  }
  if (pos != s.size()) return std::nullopt;
  return v;
}

}  // namespace detail

// Reads the `id_code,diagnosis` manifest. Image paths resolve to
// <image_dir>/<id_code>.png; image_dir may be empty when only labels matter.
inline Manifest load_manifest(const std::filesystem::path& csv_path,
                              const std::filesystem::path& image_dir = {}) {
  std::ifstream in(csv_path);
  if (!in) fail(Errc::MissingFile, "manifest not found: " + csv_path.string());

  Manifest manifest;
  std::unordered_set<std::string> seen;
  std::string line;
  int line_no = 0;

  if (!std::getline(in, line)) fail(Errc::MalformedRow, "empty manifest: " + csv_path.string());
  ++line_no;
  std::string header = detail::strip_cr(line);
  if (!header.empty() && header.front() == '\xEF') header = header.substr(3);  // UTF-8 BOM
  if (header != "id_code,diagnosis") {
    fail(Errc::MalformedRow, "line 1: expected header 'id_code,diagnosis', got '" + header + "'");
  }

  while (std::getline(in, line)) {
    ++line_no;
    std::string row = detail::strip_cr(line);
    if (row.empty()) continue;
    auto cols = detail::split_csv(row);
    if (cols.size() != 2 || cols[0].empty()) {
      fail(Errc::MalformedRow, "line " + std::to_string(line_no) + ": expected 'id,grade'");
    }
    auto grade = detail::parse_int(cols[1]);
    if (!grade || *grade < kMinGrade || *grade > kMaxGrade) {
      fail(Errc::MalformedRow,
           "line " + std::to_string(line_no) + ": grade '" + cols[1] + "' not in 0..4");
    }
    if (!seen.insert(cols[0]).second) {
      fail(Errc::DuplicateId, "id '" + cols[0] + "' appears more than once");
    }
    ImageRecord rec;
    rec.id = cols[0];
    rec.image_path = image_dir.empty() ? "" : (image_dir / (cols[0] + ".png")).string();
    rec.grade = static_cast<int>(*grade);
    manifest.records.push_back(std::move(rec));
  }
  return manifest;
}

// Grade -> task label. Binary groups any DR against none; Three pairs
// mild/moderate and severe/proliferate; Five is the identity.
inline int regroup_grade(int grade, TaskKind task) {
  if (grade < kMinGrade || grade > kMaxGrade) {
    fail(Errc::MalformedRow, "grade " + std::to_string(grade) + " not in 0..4");
  }
  switch (task) {
    case TaskKind::Binary: return grade == 0 ? 0 : 1;
    case TaskKind::Three: return grade == 0 ? 0 : (grade <= 2 ? 1 : 2);
    case TaskKind::Five: return grade;
  }
  fail(Errc::InvalidTask, "unknown task kind");
}

inline Manifest regroup_labels(Manifest manifest, TaskKind task) {
  for (auto& rec : manifest.records) rec.task_label = regroup_grade(rec.grade, task);
  return manifest;
}

inline long long round_half_up(double x) {
  return static_cast<long long>(std::floor(x + 0.5));
}

// |test| = round(test_frac*N), |val| = round(val_frac*(N-|test|)), rest train.
// Plain uniform random selection under seed; stratified draws the same
// fractions within each task label.
inline DatasetSplits split(const Manifest& manifest, double test_frac, double val_frac,
                           std::uint64_t seed, bool stratified = false) {
  if (manifest.empty()) fail(Errc::EmptyManifest, "cannot split an empty manifest");
  if (!(test_frac > 0.0 && test_frac < 1.0 && val_frac > 0.0 && val_frac < 1.0)) {
    fail(Errc::ConfigError, "split fractions must lie in (0,1)");
  }

  DatasetSplits splits;
  splits.seed = seed;

  auto assign = [&](const std::vector<ImageRecord>& pool, Rng& rng) {
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    const long long n = static_cast<long long>(pool.size());
    const long long n_test = round_half_up(test_frac * static_cast<double>(n));
    const long long n_val = round_half_up(val_frac * static_cast<double>(n - n_test));
    for (long long i = 0; i < n; ++i) {
      const ImageRecord& rec = pool[order[static_cast<std::size_t>(i)]];
      if (i < n_test) {
        splits.test.push_back(rec);
      } else if (i < n_test + n_val) {
        splits.val.push_back(rec);
      } else {
        splits.train.push_back(rec);
      }
    }
  };

  if (!stratified) {
    Rng rng(seed);
    assign(manifest.records, rng);
  } else {
    std::map<int, std::vector<ImageRecord>> by_label;
    for (const auto& rec : manifest.records) by_label[rec.task_label].push_back(rec);
    for (auto& [label, pool] : by_label) {
      Rng rng(mix_seed(seed, static_cast<std::uint64_t>(label + 1)));
      assign(pool, rng);
    }
  }
  return splits;
}

inline ClassDistribution class_distribution(const std::vector<ImageRecord>& records,
                                            int num_classes = -1) {
  int k = num_classes;
  if (k < 0) {
    k = 0;
    for (const auto& rec : records) k = std::max(k, rec.task_label + 1);
  }
  ClassDistribution dist;
  dist.counts.assign(static_cast<std::size_t>(k), 0);
  for (const auto& rec : records) {
    if (!rec.has_task_label() || rec.task_label >= k) {
      fail(Errc::LabelOutOfRange, "record '" + rec.id + "' has task_label " +
                                      std::to_string(rec.task_label) + " outside 0.." +
                                      std::to_string(k - 1));
    }
    ++dist.counts[static_cast<std::size_t>(rec.task_label)];
  }
  return dist;
}

// Balances every class up to the majority count by duplicating seeded random
// originals of that class. Copies are flagged synthetic and carry their own
// augmentation seed; the originals are passed through untouched.
inline std::vector<ImageRecord> oversample(const std::vector<ImageRecord>& train,
                                           std::uint64_t seed) {
  int k = 0;
  for (const auto& rec : train) {
    if (!rec.has_task_label()) {
      fail(Errc::LabelOutOfRange, "record '" + rec.id + "' has no task label; regroup first");
    }
    k = std::max(k, rec.task_label + 1);
  }

  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < train.size(); ++i) {
    by_class[static_cast<std::size_t>(train[i].task_label)].push_back(i);
  }
  for (int c = 0; c < k; ++c) {
    if (by_class[static_cast<std::size_t>(c)].empty()) {
      fail(Errc::EmptyClass, "class " + std::to_string(c) + " has no records to oversample");
    }
  }

  long long target = 0;
  for (const auto& idx : by_class) {
    target = std::max(target, static_cast<long long>(idx.size()));
  }

  std::vector<ImageRecord> out = train;
  for (int c = 0; c < k; ++c) {
    const auto& idx = by_class[static_cast<std::size_t>(c)];
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(c)));
    const long long missing = target - static_cast<long long>(idx.size());
    for (long long i = 0; i < missing; ++i) {
      ImageRecord copy = train[idx[rng.index(idx.size())]];
      copy.synthetic = true;
      copy.aug_seed = mix_seed(seed, static_cast<std::uint64_t>(c),
                               static_cast<std::uint64_t>(i + 1));
      out.push_back(std::move(copy));
    }
  }
  return out;
}

// Split CSVs carry the task label and synthetic lineage next to the raw grade.
inline void write_split_csv(const std::filesystem::path& path,
                            const std::vector<ImageRecord>& records) {
  std::ofstream out(path);
  if (!out) fail(Errc::IoError, "cannot write " + path.string());
  out << "id_code,diagnosis,task_label,synthetic,aug_seed\n";
  for (const auto& rec : records) {
    out << rec.id << ',' << rec.grade << ',' << rec.task_label << ','
        << (rec.synthetic ? 1 : 0) << ',' << rec.aug_seed << '\n';
  }
}

inline std::vector<ImageRecord> read_split_csv(const std::filesystem::path& path,
                                               const std::filesystem::path& image_dir = {}) {
  std::ifstream in(path);
  if (!in) fail(Errc::MissingFile, "split manifest not found: " + path.string());
  std::string line;
  if (!std::getline(in, line)) fail(Errc::MalformedRow, "empty split manifest " + path.string());
  if (detail::strip_cr(line) != "id_code,diagnosis,task_label,synthetic,aug_seed") {
    fail(Errc::MalformedRow, "unexpected split header in " + path.string());
  }
  std::vector<ImageRecord> records;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    std::string row = detail::strip_cr(line);
    if (row.empty()) continue;
    auto cols = detail::split_csv(row);
    if (cols.size() != 5) {
      fail(Errc::MalformedRow, path.string() + " line " + std::to_string(line_no));
    }
    auto grade = detail::parse_int(cols[1]);
    auto label = detail::parse_int(cols[2]);
    auto synth = detail::parse_int(cols[3]);
    auto aseed = detail::parse_u64(cols[4]);
    if (!grade || !label || !synth || !aseed) {
      fail(Errc::MalformedRow, path.string() + " line " + std::to_string(line_no));
    }
    ImageRecord rec;
    rec.id = cols[0];
    rec.image_path = image_dir.empty() ? "" : (image_dir / (cols[0] + ".png")).string();
    rec.grade = static_cast<int>(*grade);
    rec.task_label = static_cast<int>(*label);
    rec.synthetic = *synth != 0;
    rec.aug_seed = *aseed;
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace retina::dataset
