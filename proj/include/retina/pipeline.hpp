#pragma once

#include <openssl/evp.h>

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "retina/augment.hpp"
#include "retina/cascade.hpp"
#include "retina/checkpoint.hpp"
#include "retina/config.hpp"
#include "retina/dataset.hpp"
#include "retina/errors.hpp"
#include "retina/imageops.hpp"
#include "retina/metrics.hpp"
#include "retina/modelkit.hpp"
#include "retina/png_io.hpp"
#include "retina/trainer.hpp"

namespace retina::pipeline {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Content hashing (SHA-256 via OpenSSL).

inline std::string sha256_hex(const void* data, std::size_t len) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int digest_len = 0;
  if (EVP_Digest(data, len, digest, &digest_len, EVP_sha256(), nullptr) != 1) {
    fail(Errc::IoError, "EVP_Digest failed");
  }
  std::ostringstream out;
  out << std::hex << std::setfill('0');
  for (unsigned int i = 0; i < digest_len; ++i) {
    out << std::setw(2) << static_cast<int>(digest[i]);
  }
  return out.str();
}

inline std::string sha256_string(const std::string& s) { return sha256_hex(s.data(), s.size()); }

inline std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::MissingFile, "cannot hash missing file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return sha256_string(buf.str());
}

// The per-epoch wall-clock field is timing noise; artifact manifests hash the
// log with it masked so recorded hashes stay rerun-stable.
inline std::string sha256_train_log(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::MissingFile, "cannot hash missing file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  static const std::regex wall_re("\"wall_ms\":[0-9]+");
  return sha256_string(std::regex_replace(buf.str(), wall_re, "\"wall_ms\":0"));
}

// ---------------------------------------------------------------------------
// Run artifacts: every emitted file, with a content hash, written to a
// per-command manifest under the output directory.

struct RunArtifacts {
  std::map<std::string, std::string> files;  // relative path -> sha256

  void record(const fs::path& root, const fs::path& file) {
    files[fs::relative(file, root).generic_string()] = sha256_file(file);
  }
  void record_hash(const fs::path& root, const fs::path& file, std::string hash) {
    files[fs::relative(file, root).generic_string()] = std::move(hash);
  }
};

inline void write_artifact_manifest(const fs::path& root, const std::string& command,
                                    const config::ExperimentConfig& cfg, RunArtifacts& artifacts) {
  nlohmann::json j;
  j["command"] = command;
  j["config_hash"] = sha256_string(cfg.raw.dump());
  j["files"] = artifacts.files;
  const fs::path path = root / ("artifacts_" + command + ".json");
  std::ofstream out(path);
  if (!out) fail(Errc::IoError, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Preprocess cache: content-addressed by (image id, preprocess-config hash).
// RETINA_PIPELINE_CACHE overrides the default location.

inline fs::path cache_root(const config::ExperimentConfig& cfg) {
  if (const char* env = std::getenv("RETINA_PIPELINE_CACHE")) return fs::path(env);
  return cfg.output_dir / "cache";
}

inline std::string preprocess_config_hash(const imageops::PreprocessConfig& p) {
  nlohmann::json j = {{"target_size", p.target_size},
                      {"black_threshold", p.black_threshold},
                      {"blend_alpha", p.blend_alpha},
                      {"blend_bias", p.blend_bias},
                      {"sigma_ratio", p.sigma_ratio}};
  return sha256_string(j.dump()).substr(0, 16);
}

// ---------------------------------------------------------------------------
// Sample source backed by image records: loads pixels, resizes to the model
// input, and regenerates synthetic-record augmentations from their seeds.

class RecordSampleSource : public trainer::SampleSource {
 public:
  RecordSampleSource(std::vector<dataset::ImageRecord> records, fs::path preprocessed_dir,
                     int input_size, augment::AugmentConfig aug)
      : records_(std::move(records)),
        preprocessed_dir_(std::move(preprocessed_dir)),
        input_size_(input_size),
        aug_(aug) {}

  std::size_t size() const override { return records_.size(); }

  trainer::Sample get(std::size_t index) const override {
    const dataset::ImageRecord& rec = records_.at(index);
    fs::path path = rec.image_path;
    if (!preprocessed_dir_.empty()) {
      fs::path cached = preprocessed_dir_ / (rec.id + ".png");
      if (fs::exists(cached)) path = cached;
    }
    if (path.empty() || !fs::exists(path)) {
      fail(Errc::MissingFile, "image for id '" + rec.id + "' not found at " + path.string());
    }
    ImageBuffer img = read_png(path);
    if (img.width != input_size_ || img.height != input_size_) {
      img = imageops::resize(img, input_size_);
    }
    if (rec.synthetic) {
      augment::AugmentConfig aug = aug_;
      aug.seed = rec.aug_seed;
      img = augment::augment(img, aug);
    }
    return {std::move(img), rec.task_label};
  }

  const std::vector<dataset::ImageRecord>& records() const { return records_; }

 private:
  std::vector<dataset::ImageRecord> records_;
  fs::path preprocessed_dir_;
  int input_size_;
  augment::AugmentConfig aug_;
};

// ---------------------------------------------------------------------------
// prepare: manifest -> regrouped, split, oversampled CSVs + distributions.

inline RunArtifacts cmd_prepare(const config::ExperimentConfig& cfg) {
  dataset::Manifest manifest = dataset::load_manifest(cfg.manifest_path, cfg.image_dir);
  if (manifest.empty()) fail(Errc::EmptyManifest, cfg.manifest_path.string());

  for (const auto& rec : manifest.records) {
    if (!fs::exists(rec.image_path)) {
      fail(Errc::MissingFile, "image missing for id '" + rec.id + "': " + rec.image_path);
    }
  }

  manifest = dataset::regroup_labels(std::move(manifest), cfg.task);
  dataset::DatasetSplits splits =
      dataset::split(manifest, cfg.test_frac, cfg.val_frac, cfg.seed, cfg.stratified);

  const int k = dataset::class_count(cfg.task);
  dataset::ClassDistribution before = dataset::class_distribution(splits.train, k);
  splits.train = dataset::oversample(splits.train, cfg.seed);
  dataset::ClassDistribution after = dataset::class_distribution(splits.train, k);

  const fs::path split_dir = cfg.output_dir / "splits";
  fs::create_directories(split_dir);
  dataset::write_split_csv(split_dir / "train.csv", splits.train);
  dataset::write_split_csv(split_dir / "val.csv", splits.val);
  dataset::write_split_csv(split_dir / "test.csv", splits.test);

  nlohmann::json dist;
  dist["task"] = dataset::task_name(cfg.task);
  dist["seed"] = cfg.seed;
  dist["train_before_balancing"] = before.counts;
  dist["train_after_balancing"] = after.counts;
  dist["val"] = dataset::class_distribution(splits.val, k).counts;
  dist["test"] = dataset::class_distribution(splits.test, k).counts;
  {
    std::ofstream out(split_dir / "distribution.json");
    if (!out) fail(Errc::IoError, "cannot write distribution.json");
    out << dist.dump(2) << '\n';
  }

  RunArtifacts artifacts;
  artifacts.record(cfg.output_dir, split_dir / "train.csv");
  artifacts.record(cfg.output_dir, split_dir / "val.csv");
  artifacts.record(cfg.output_dir, split_dir / "test.csv");
  artifacts.record(cfg.output_dir, split_dir / "distribution.json");
  write_artifact_manifest(cfg.output_dir, "prepare", cfg, artifacts);
  return artifacts;
}

// ---------------------------------------------------------------------------
// preprocess: batch pipeline over the manifest images, cached by content key.
// --materialize additionally writes augmented synthetic-train pixels.

inline RunArtifacts cmd_preprocess(const config::ExperimentConfig& cfg, bool materialize = false) {
  dataset::Manifest manifest = dataset::load_manifest(cfg.manifest_path, cfg.image_dir);
  if (manifest.empty()) fail(Errc::EmptyManifest, cfg.manifest_path.string());

  const fs::path out_dir = cfg.output_dir / "preprocessed";
  fs::create_directories(out_dir);
  const std::string cfg_hash = preprocess_config_hash(cfg.preprocess);
  const fs::path cache_dir = cache_root(cfg) / cfg_hash;
  fs::create_directories(cache_dir);

  const auto process_one = [&](const dataset::ImageRecord& rec) {
    const fs::path dst = out_dir / (rec.id + ".png");
    const fs::path cached = cache_dir / (rec.id + ".png");
    if (fs::exists(cached)) {
      fs::copy_file(cached, dst, fs::copy_options::overwrite_existing);
      return;
    }
    if (!fs::exists(rec.image_path)) {
      fail(Errc::MissingFile, "image missing for id '" + rec.id + "': " + rec.image_path);
    }
    ImageBuffer processed = imageops::preprocess(read_png(rec.image_path), cfg.preprocess);
    write_png(cached, processed);
    fs::copy_file(cached, dst, fs::copy_options::overwrite_existing);
  };

  const int jobs = std::max(1, cfg.jobs);
  if (jobs == 1) {
    for (const auto& rec : manifest.records) process_one(rec);
  } else {
    std::vector<std::thread> workers;
    std::exception_ptr first_error;
    std::mutex error_mutex;
    for (int w = 0; w < jobs; ++w) {
      workers.emplace_back([&, w]() {
        try {
          for (std::size_t i = static_cast<std::size_t>(w); i < manifest.records.size();
               i += static_cast<std::size_t>(jobs)) {
            process_one(manifest.records[i]);
          }
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      });
    }
    for (auto& t : workers) t.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  RunArtifacts artifacts;
  for (const auto& rec : manifest.records) {
    artifacts.record(cfg.output_dir, out_dir / (rec.id + ".png"));
  }

  if (materialize) {
    const fs::path train_csv = cfg.output_dir / "splits" / "train.csv";
    if (!fs::exists(train_csv)) {
      fail(Errc::MissingFile, "materialize needs prepare's split output at " + train_csv.string());
    }
    const fs::path aug_dir = cfg.output_dir / "augmented";
    fs::create_directories(aug_dir);
    for (const auto& rec : dataset::read_split_csv(train_csv, cfg.image_dir)) {
      if (!rec.synthetic) continue;
      ImageBuffer base = read_png(out_dir / (rec.id + ".png"));
      augment::AugmentConfig aug = cfg.augment;
      aug.seed = rec.aug_seed;
      const fs::path dst =
          aug_dir / (rec.id + "_aug" + std::to_string(rec.aug_seed) + ".png");
      write_png(dst, augment::augment(base, aug));
      artifacts.record(cfg.output_dir, dst);
    }
  }

  write_artifact_manifest(cfg.output_dir, "preprocess", cfg, artifacts);
  return artifacts;
}

// ---------------------------------------------------------------------------
// train: two-phase protocol over the prepared splits.

inline modelkit::Model build_model(const config::ExperimentConfig& cfg) {
  modelkit::ModelSpec spec;
  spec.backbone = cfg.backbone;
  spec.backbone.frozen = cfg.phase_config().backbone_frozen;
  spec.task = cfg.task;
  spec.head = modelkit::build_head(
      cfg.task, modelkit::feature_shape(cfg.backbone.name, cfg.backbone.input_size).flat(),
      cfg.hidden_widths);
  return modelkit::Model(spec, cfg.seed);
}

inline fs::path preprocessed_dir_if_present(const config::ExperimentConfig& cfg) {
  const fs::path dir = cfg.output_dir / "preprocessed";
  return fs::exists(dir) ? dir : fs::path{};
}

inline RunArtifacts cmd_train(const config::ExperimentConfig& cfg) {
  const fs::path split_dir = cfg.output_dir / "splits";
  auto train_records = dataset::read_split_csv(split_dir / "train.csv", cfg.image_dir);
  auto val_records = dataset::read_split_csv(split_dir / "val.csv", cfg.image_dir);

  modelkit::Model model = build_model(cfg);
  if (!cfg.resume_from.empty()) {
    auto loaded = checkpoint::load_model(cfg.resume_from);
    if (dataset::task_name(loaded.model.spec().task) != dataset::task_name(cfg.task)) {
      fail(Errc::CheckpointMismatch, "resume checkpoint trained for a different task");
    }
    model.restore_parameters(loaded.model.snapshot_parameters());
    if (cfg.phase == 2) {
      if (cfg.phase2_reinit == "head") {
        model.reinit_head(mix_seed(cfg.seed, 0xada2));
      } else {
        // 'all': keep the fresh He-uniform initialization of the new model
        modelkit::Model fresh = build_model(cfg);
        model.restore_parameters(fresh.snapshot_parameters());
      }
    }
  }

  const fs::path pre_dir = preprocessed_dir_if_present(cfg);
  RecordSampleSource train_src(train_records, pre_dir, cfg.backbone.input_size, cfg.augment);
  RecordSampleSource val_src(val_records, pre_dir, cfg.backbone.input_size, cfg.augment);

  const fs::path log_path = cfg.output_dir / "train_log.jsonl";
  std::ofstream log(log_path);
  if (!log) fail(Errc::IoError, "cannot write " + log_path.string());

  trainer::TrainResult result = trainer::train(model, train_src, val_src, cfg.train_config(), &log);
  log.close();

  const fs::path ckpt_base = cfg.output_dir / "checkpoint_best";
  checkpoint::save_model(ckpt_base, model, cfg.phase, cfg.seed);

  nlohmann::json summary;
  summary["best_epoch"] = result.best_epoch;
  summary["stopped_early"] = result.stopped_early;
  summary["epochs_run"] = result.history.size();
  summary["best_val_acc"] = result.history[static_cast<std::size_t>(result.best_epoch - 1)].val_acc;
  summary["learning_rate"] = cfg.train_config().optimizer.learning_rate;
  summary["optimizer"] = cfg.optimizer.kind == trainer::OptimizerKind::Adam ? "adam" : "sgd";
  summary["phase"] = cfg.phase;
  {
    std::ofstream out(cfg.output_dir / "train_summary.json");
    out << summary.dump(2) << '\n';
  }

  RunArtifacts artifacts;
  artifacts.record_hash(cfg.output_dir, log_path, sha256_train_log(log_path));
  artifacts.record(cfg.output_dir, ckpt_base.string() + ".ckpt");
  artifacts.record(cfg.output_dir, ckpt_base.string() + ".json");
  artifacts.record(cfg.output_dir, cfg.output_dir / "train_summary.json");
  write_artifact_manifest(cfg.output_dir, "train", cfg, artifacts);
  return artifacts;
}

// ---------------------------------------------------------------------------
// evaluate: full metric suite over the test split.

inline metrics::EvalReport evaluate_model(modelkit::Model& model,
                                          const trainer::SampleSource& test_src, int batch_size) {
  auto probs = trainer::predict(model, test_src, batch_size);
  std::vector<int> y_true;
  y_true.reserve(test_src.size());
  for (std::size_t i = 0; i < test_src.size(); ++i) y_true.push_back(test_src.get(i).label);

  if (model.spec().head.output_activation == modelkit::Activation::Sigmoid) {
    std::vector<double> scores;
    scores.reserve(probs.size());
    for (const auto& row : probs) scores.push_back(std::clamp(row[0], 0.0, 1.0));
    return metrics::evaluate_binary(scores, y_true);
  }
  return metrics::evaluate_multiclass(probs, y_true);
}

inline RunArtifacts write_report_artifacts(const config::ExperimentConfig& cfg,
                                           const metrics::EvalReport& report,
                                           const fs::path& dir, const std::string& command) {
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "eval_report.json");
    if (!out) fail(Errc::IoError, "cannot write eval_report.json");
    out << metrics::report_to_json(report).dump(2) << '\n';
  }
  metrics::write_table_csv(dir / "metrics_table.csv", report);
  metrics::write_confusion_csv(dir / "confusion.csv", report.confusion);
  metrics::write_roc_csv(dir / "roc.csv", report);

  RunArtifacts artifacts;
  artifacts.record(cfg.output_dir, dir / "eval_report.json");
  artifacts.record(cfg.output_dir, dir / "metrics_table.csv");
  artifacts.record(cfg.output_dir, dir / "confusion.csv");
  artifacts.record(cfg.output_dir, dir / "roc.csv");
  write_artifact_manifest(cfg.output_dir, command, cfg, artifacts);
  return artifacts;
}

inline RunArtifacts cmd_evaluate(const config::ExperimentConfig& cfg,
                                 std::optional<fs::path> checkpoint_base = std::nullopt) {
  const fs::path base = checkpoint_base.value_or(cfg.output_dir / "checkpoint_best");
  auto loaded = checkpoint::load_model(base);
  if (dataset::task_name(loaded.model.spec().task) != dataset::task_name(cfg.task)) {
    fail(Errc::CheckpointMismatch,
         "checkpoint task does not match config task; refusing to evaluate");
  }

  auto test_records = dataset::read_split_csv(cfg.output_dir / "splits" / "test.csv", cfg.image_dir);
  RecordSampleSource test_src(test_records, preprocessed_dir_if_present(cfg),
                              loaded.model.spec().backbone.input_size, cfg.augment);

  metrics::EvalReport report = evaluate_model(loaded.model, test_src, cfg.batch_size);
  return write_report_artifacts(cfg, report, cfg.output_dir, "evaluate");
}

// ---------------------------------------------------------------------------
// cascade: compose binary node checkpoints into 5-class predictions.

inline RunArtifacts cmd_cascade(const config::ExperimentConfig& cfg, const fs::path& cascade_file) {
  std::ifstream in(cascade_file);
  if (!in) fail(Errc::MissingFile, "cascade description not found: " + cascade_file.string());
  cascade::CascadeTree tree = cascade::tree_from_json(nlohmann::json::parse(in));

  std::vector<const cascade::CascadeNode*> nodes;
  cascade::collect_nodes(*tree.root, nodes);

  std::map<std::string, std::unique_ptr<modelkit::Model>> node_models;
  for (const cascade::CascadeNode* node : nodes) {
    if (node->model_ref.empty() || !fs::exists(node->model_ref + ".ckpt")) {
      fail(Errc::MissingNodeModel,
           "cascade node '" + node->name + "' has no checkpoint at '" + node->model_ref + "'");
    }
    auto loaded = checkpoint::load_model(node->model_ref);
    if (loaded.model.spec().head.output_activation != modelkit::Activation::Sigmoid) {
      fail(Errc::CheckpointMismatch, "cascade node '" + node->name + "' is not a binary model");
    }
    node_models[node->name] = std::make_unique<modelkit::Model>(std::move(loaded.model));
  }

  auto test_records = dataset::read_split_csv(cfg.output_dir / "splits" / "test.csv", cfg.image_dir);
  const fs::path pre_dir = preprocessed_dir_if_present(cfg);

  std::vector<int> y_true;
  y_true.reserve(test_records.size());
  for (const auto& rec : test_records) {
    if (rec.task_label < 0 || rec.task_label >= tree.num_classes) {
      fail(Errc::LabelOutOfRange, "cascade evaluation needs 5-class task labels");
    }
    y_true.push_back(rec.task_label);
  }

  // batched sigmoid scores per node, then per-sample path products
  std::map<std::string, std::vector<double>> node_scores;
  for (const auto& [name, model] : node_models) {
    RecordSampleSource src(test_records, pre_dir, model->spec().backbone.input_size, cfg.augment);
    auto probs = trainer::predict(*model, src, cfg.batch_size);
    std::vector<double>& scores = node_scores[name];
    scores.reserve(probs.size());
    for (const auto& row : probs) scores.push_back(std::clamp(row[0], 0.0, 1.0));
  }

  std::vector<std::vector<double>> rows;
  rows.reserve(test_records.size());
  for (std::size_t i = 0; i < test_records.size(); ++i) {
    std::map<std::string, double> scores;
    for (const auto& [name, per_sample] : node_scores) scores[name] = per_sample[i];
    rows.push_back(cascade::path_probabilities(tree, scores));
  }

  metrics::EvalReport report = metrics::evaluate_multiclass(rows, y_true);
  return write_report_artifacts(cfg, report, cfg.output_dir / "cascade", "cascade");
}

// ---------------------------------------------------------------------------
// report: render the stored metrics table, optionally against the published
// full-scale reference numbers (informational; no pass/fail gate).

struct ReferenceResult {
  const char* setup;
  double accuracy;
  double micro_auc;
  double macro_auc;
};

inline std::optional<ReferenceResult> full_scale_reference(dataset::TaskKind task) {
  switch (task) {
    case dataset::TaskKind::Binary:
      return ReferenceResult{"resnet50 + adam @512", 0.9659, 0.99, 0.99};
    case dataset::TaskKind::Three:
      return ReferenceResult{"inception_resnet_v2 + adam @299", 0.8814, 0.98, 0.97};
    case dataset::TaskKind::Five:
      return ReferenceResult{"inception_resnet_v2 + adam @299", 0.8502, 0.97, 0.97};
  }
  return std::nullopt;
}

inline int cmd_report(const config::ExperimentConfig& cfg, bool show_reference,
                      std::ostream& out) {
  const fs::path report_path = cfg.output_dir / "eval_report.json";
  std::ifstream in(report_path);
  if (!in) fail(Errc::MissingFile, "no evaluation report at " + report_path.string());
  nlohmann::json j = nlohmann::json::parse(in);

  const double values[6] = {
      j.at("accuracy").get<double>(),
      j.at("macro").at("precision").get<double>(),
      j.at("macro").at("recall").get<double>(),
      j.at("micro_auc").get<double>(),
      j.at("macro_auc").get<double>(),
      j.at("macro").at("f1").get<double>(),
  };
  const auto& names = metrics::table_metric_names();
  out << "Task: " << dataset::task_name(cfg.task) << "\n";
  out << std::fixed << std::setprecision(4);
  for (std::size_t i = 0; i < names.size(); ++i) {
    out << "  " << std::left << std::setw(20) << names[i] << values[i] << "\n";
  }

  if (show_reference) {
    if (auto ref = full_scale_reference(cfg.task)) {
      out << "Full-scale reference (" << ref->setup << "), informational only:\n";
      out << "  " << std::left << std::setw(20) << "Test Accuracy" << ref->accuracy
          << "  (delta " << std::showpos << values[0] - ref->accuracy << std::noshowpos << ")\n";
      out << "  " << std::left << std::setw(20) << "Micro Average AUC" << ref->micro_auc
          << "  (delta " << std::showpos << values[3] - ref->micro_auc << std::noshowpos << ")\n";
      out << "  " << std::left << std::setw(20) << "Macro Average AUC" << ref->macro_auc
          << "  (delta " << std::showpos << values[4] - ref->macro_auc << std::noshowpos << ")\n";
    }
  }
  return 0;
}

}  // namespace retina::pipeline
